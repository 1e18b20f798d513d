#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ancelab/types.hpp"

namespace ance {

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

struct Posting {
  std::uint32_t doc = 0;  // row into InvertedIndex::doc_ids
  std::uint32_t tf = 0;
};

struct InvertedIndex {
  std::vector<std::string> doc_ids;
  std::vector<std::uint32_t> doc_len;  // token counts
  std::unordered_map<std::string, std::uint32_t> row_of;
  double avg_len = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings;

  std::size_t num_docs() const { return doc_ids.size(); }
  std::uint32_t doc_frequency(const std::string& term) const {
    auto it = postings.find(term);
    return it == postings.end() ? 0u : static_cast<std::uint32_t>(it->second.size());
  }
};

// Builds postings over tokenized docs. Empty corpus is an error.
InvertedIndex build_inverted_index(const Corpus& corpus);

// Okapi BM25 with idf = ln((N - df + 0.5) / (df + 0.5) + 1), summed over query
// token occurrences. A doc sharing no term with the query scores 0.
double bm25_score(const InvertedIndex& idx, const std::string& query_text,
                  const std::string& doc_id, const Bm25Params& p = {});

// Top-k docs with score > 0, ordered by score descending, ties by ascending
// doc id. Docs matching no query term are never returned.
std::vector<ScoredDoc> bm25_top_k(const InvertedIndex& idx, const std::string& query_text,
                                  int k, const Bm25Params& p = {});

void save_inverted_index(const InvertedIndex& idx, const std::string& path);
InvertedIndex load_inverted_index(const std::string& path);

}  // namespace ance
