#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ancelab/types.hpp"

namespace ance {

// Lowercased maximal alphanumeric runs, in order. Pure ASCII semantics: every
// non-alphanumeric byte is a separator.
std::vector<std::string> tokenize(const std::string& text);

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct FeaturizeOptions {
  std::uint32_t dim = 65536;
  bool bigrams = false;  // adds "a_b" terms for adjacent token pairs
};

// Hashed term counts; colliding terms merge into one entry.
FeatureVector featurize(const std::string& text, const FeaturizeOptions& opt);

// JSONL collections: one object per line, {"id","text"} plus optional
// "parent_id" for passages. Errors carry 1-based line numbers.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& c, const std::string& path);
std::vector<Query> load_queries(const std::string& path);
void save_queries(const std::vector<Query>& qs, const std::string& path);

// Whitespace-separated "qid 0 docid grade" lines, grade >= 0.
Judgments load_judgments(const std::string& path);
void save_judgments(const Judgments& j, const std::string& path);
// Checks every referenced id against the loaded collections.
void validate_judgments(const Judgments& j, const Corpus& c, const std::vector<Query>& qs);

struct PassageOptions {
  int window = 64;
  int stride = 64;
  int max_passages = 4;
};

// Token windows of one document as child documents with ids "{id}#p{k}" and
// parent_id set. A doc shorter than the window yields a single passage.
std::vector<Document> split_passages(const Document& doc, const PassageOptions& opt);
// Passage corpus for every doc; first_only keeps only the leading window.
Corpus split_corpus(const Corpus& c, const PassageOptions& opt, bool first_only = false);

struct SyntheticSpec {
  int corpus_size = 2000;
  int num_queries = 250;
  int num_topics = 50;
  int doc_len = 64;
  int query_len = 12;
  double mismatch_rate = 0.2;  // probability of drawing from the sided pool
                               // (Vq for queries, Vd for docs) instead of the
                               // shared pool; 1 = zero query/doc term overlap
  std::uint64_t seed = 42;
};

struct SyntheticData {
  Corpus corpus;
  std::vector<Query> queries;
  Judgments judgments;
};

// Topic-structured collection with disjoint per-topic query-side and doc-side
// vocabularies plus a per-topic shared pool that bridges them. Query i and doc
// i share topic i % num_topics; docs beyond num_queries are distractors drawn
// purely from the doc-side pool, so they collide with relevant docs in
// embedding space but share no term with any query.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace ance
