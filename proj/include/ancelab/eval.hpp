#pragma once

#include <map>
#include <string>
#include <vector>

#include "ancelab/types.hpp"

namespace ance {

struct RunEntry {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;
};

// TREC-style ranked results: per query, entries with contiguous ranks 1..n and
// non-increasing scores.
struct RunFile {
  std::map<std::string, std::vector<RunEntry>> results;
  std::string tag = "run";
};

// Lines "qid Q0 docid rank score tag". Malformed lines, rank gaps, and score
// increases are reported with their line number.
RunFile read_run(const std::string& path);
void write_run(const RunFile& run, const std::string& path);

struct MetricValue {
  double value = 0.0;
  int skipped = 0;  // queries with no relevant docs
};

// Graded NDCG with gain 2^grade - 1 and log2(rank+1) discount, mean over the
// run's queries; queries with no relevant docs are skipped and tallied.
MetricValue ndcg_at_k(const RunFile& run, const Judgments& judgments, int k = 10);

// Mean of 1/rank of the first relevant doc within the top k, 0 when none.
// Every query counts; nothing is skipped.
double mrr_at_k(const RunFile& run, const Judgments& judgments, int k = 10);

struct RecallResult {
  double recall = 0.0;    // mean |top-k ∩ relevants| / |relevants|
  double coverage = 0.0;  // mean any-hit indicator
  int skipped = 0;
};

RecallResult recall_at_k(const RunFile& run, const Judgments& judgments, int k);

// Mean fraction of top-k docs with no qrels entry at all (neither 0 nor
// positive).
double hole_rate(const RunFile& run, const Judgments& judgments, int k);

struct RunOverlapResult {
  double mean = 0.0;
  int shared_queries = 0;
  bool query_mismatch = false;  // the two runs cover different query sets
};

// Mean per-query top-k id overlap between two runs, computed on the shared
// queries.
RunOverlapResult run_overlap(const RunFile& a, const RunFile& b, int k = 100);

}  // namespace ance
