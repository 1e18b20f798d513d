#include "ancelab/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ancelab/binio.hpp"
#include "ancelab/corpus.hpp"

namespace ance {

InvertedIndex build_inverted_index(const Corpus& corpus) {
  if (corpus.size() == 0) throw DataError("cannot build an inverted index over an empty corpus");
  InvertedIndex idx;
  idx.doc_ids.reserve(corpus.size());
  idx.doc_len.reserve(corpus.size());
  double total_len = 0.0;
  for (std::uint32_t row = 0; row < corpus.size(); ++row) {
    const Document& d = corpus.docs[row];
    auto toks = tokenize(d.text);
    idx.doc_ids.push_back(d.id);
    idx.row_of.emplace(d.id, row);
    idx.doc_len.push_back(static_cast<std::uint32_t>(toks.size()));
    total_len += static_cast<double>(toks.size());
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : toks) ++tf[t];
    for (const auto& [term, count] : tf) idx.postings[term].push_back(Posting{row, count});
  }
  idx.avg_len = total_len / static_cast<double>(corpus.size());
  return idx;
}

namespace {

double idf(const InvertedIndex& idx, std::uint32_t df) {
  double n = static_cast<double>(idx.num_docs());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double tf_term(double tf, double doc_len, double avg_len, const Bm25Params& p) {
  return tf / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avg_len));
}

}  // namespace

double bm25_score(const InvertedIndex& idx, const std::string& query_text,
                  const std::string& doc_id, const Bm25Params& p) {
  auto rit = idx.row_of.find(doc_id);
  if (rit == idx.row_of.end()) throw DataError("unknown doc id: " + doc_id);
  std::uint32_t row = rit->second;
  double score = 0.0;
  for (const auto& term : tokenize(query_text)) {
    auto it = idx.postings.find(term);
    if (it == idx.postings.end()) continue;
    auto pit = std::find_if(it->second.begin(), it->second.end(),
                            [row](const Posting& po) { return po.doc == row; });
    if (pit == it->second.end()) continue;
    score += idf(idx, static_cast<std::uint32_t>(it->second.size())) *
             tf_term(pit->tf, idx.doc_len[row], idx.avg_len, p);
  }
  return score;
}

std::vector<ScoredDoc> bm25_top_k(const InvertedIndex& idx, const std::string& query_text,
                                  int k, const Bm25Params& p) {
  if (k < 1) throw ConfigError("k must be at least 1");
  std::unordered_map<std::uint32_t, double> acc;
  for (const auto& term : tokenize(query_text)) {
    auto it = idx.postings.find(term);
    if (it == idx.postings.end()) continue;
    double w = idf(idx, static_cast<std::uint32_t>(it->second.size()));
    for (const Posting& po : it->second)
      acc[po.doc] += w * tf_term(po.tf, idx.doc_len[po.doc], idx.avg_len, p);
  }
  std::vector<ScoredDoc> out;
  out.reserve(acc.size());
  for (const auto& [row, score] : acc)
    if (score > 0.0) out.push_back(ScoredDoc{idx.doc_ids[row], score});
  std::sort(out.begin(), out.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
  return out;
}

void save_inverted_index(const InvertedIndex& idx, const std::string& path) {
  auto os = open_out(path);
  write_bytes(os, "ANCS", 4);
  write_pod<std::uint32_t>(os, 1);
  write_pod<std::uint64_t>(os, idx.num_docs());
  write_pod<double>(os, idx.avg_len);
  for (std::size_t i = 0; i < idx.num_docs(); ++i) {
    write_str(os, idx.doc_ids[i]);
    write_pod<std::uint32_t>(os, idx.doc_len[i]);
  }
  // Terms in sorted order so identical indexes serialize identically.
  std::vector<const std::string*> terms;
  terms.reserve(idx.postings.size());
  for (const auto& [term, list] : idx.postings) terms.push_back(&term);
  std::sort(terms.begin(), terms.end(),
            [](const std::string* a, const std::string* b) { return *a < *b; });
  write_pod<std::uint64_t>(os, terms.size());
  for (const std::string* term : terms) {
    const auto& list = idx.postings.at(*term);
    write_str(os, *term);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(list.size()));
    for (const Posting& po : list) {
      write_pod<std::uint32_t>(os, po.doc);
      write_pod<std::uint32_t>(os, po.tf);
    }
  }
  if (!os) throw DataError("write failed: " + path);
}

InvertedIndex load_inverted_index(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "ANCS", "inverted index");
  auto ver = read_pod<std::uint32_t>(is, "inverted index version");
  if (ver != 1) throw DataError("unsupported inverted index version " + std::to_string(ver));
  InvertedIndex idx;
  auto n = read_pod<std::uint64_t>(is, "doc count");
  idx.avg_len = read_pod<double>(is, "avg len");
  idx.doc_ids.reserve(n);
  idx.doc_len.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    idx.doc_ids.push_back(read_str(is, "doc id"));
    idx.row_of.emplace(idx.doc_ids.back(), static_cast<std::uint32_t>(i));
    idx.doc_len.push_back(read_pod<std::uint32_t>(is, "doc len"));
  }
  auto nterms = read_pod<std::uint64_t>(is, "term count");
  for (std::uint64_t t = 0; t < nterms; ++t) {
    std::string term = read_str(is, "term");
    auto npost = read_pod<std::uint32_t>(is, "posting count");
    auto& list = idx.postings[term];
    list.reserve(npost);
    for (std::uint32_t i = 0; i < npost; ++i) {
      auto doc = read_pod<std::uint32_t>(is, "posting doc");
      auto tf = read_pod<std::uint32_t>(is, "posting tf");
      if (doc >= n) throw DataError("posting references row " + std::to_string(doc) +
                                    " beyond doc table");
      list.push_back(Posting{doc, tf});
    }
  }
  return idx;
}

}  // namespace ance
