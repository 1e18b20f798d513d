#include "ancelab/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "ancelab/analysis.hpp"

namespace ance {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

[[noreturn]] void line_error(const std::string& path, std::size_t lineno,
                             const std::string& what) {
  throw DataError(path + ":" + std::to_string(lineno) + ": " + what);
}

std::vector<std::string> top_ids(const std::vector<RunEntry>& entries, int k) {
  std::vector<std::string> ids;
  std::size_t n = std::min(entries.size(), static_cast<std::size_t>(k));
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(entries[i].doc_id);
  return ids;
}

void require_nonempty(const RunFile& run) {
  if (run.results.empty()) throw DataError("run file has no queries");
}

}  // namespace

RunFile read_run(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open file: " + path);
  RunFile run;
  bool tag_set = false;
  std::map<std::string, std::unordered_set<std::string>> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string qid, q0, doc, rank_s, score_s, tag;
    if (!(ls >> qid >> q0 >> doc >> rank_s >> score_s >> tag))
      line_error(path, lineno, "expected 6 fields 'qid Q0 docid rank score tag'");
    std::string extra;
    if (ls >> extra) line_error(path, lineno, "trailing fields after tag");
    if (q0 != "Q0") line_error(path, lineno, "second field must be Q0");

    int rank = 0;
    auto rr = std::from_chars(rank_s.data(), rank_s.data() + rank_s.size(), rank);
    if (rr.ec != std::errc{} || rr.ptr != rank_s.data() + rank_s.size() || rank < 1)
      line_error(path, lineno, "bad rank '" + rank_s + "'");
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(score_s, &used);
      if (used != score_s.size()) throw std::invalid_argument(score_s);
    } catch (const std::exception&) {
      line_error(path, lineno, "bad score '" + score_s + "'");
    }

    auto& entries = run.results[qid];
    if (rank != static_cast<int>(entries.size()) + 1)
      line_error(path, lineno,
                 "rank " + std::to_string(rank) + " breaks the 1..n sequence for query " + qid);
    if (!entries.empty() && score > entries.back().score)
      line_error(path, lineno, "score increases within query " + qid);
    if (!seen[qid].insert(doc).second)
      line_error(path, lineno, "duplicate doc " + doc + " for query " + qid);
    entries.push_back(RunEntry{doc, score, rank});
    if (!tag_set) {
      run.tag = tag;
      tag_set = true;
    }
  }
  require_nonempty(run);
  return run;
}

void write_run(const RunFile& run, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path);
  for (const auto& [qid, entries] : run.results)
    for (const auto& e : entries)
      os << qid << " Q0 " << e.doc_id << " " << e.rank << " " << fmt_double(e.score) << " "
         << run.tag << "\n";
}

MetricValue ndcg_at_k(const RunFile& run, const Judgments& judgments, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  require_nonempty(run);
  MetricValue out;
  double sum = 0.0;
  int counted = 0;
  for (const auto& [qid, entries] : run.results) {
    auto relevant = judgments.relevant_docs(qid);
    if (relevant.empty()) {
      ++out.skipped;
      continue;
    }
    double dcg = 0.0;
    std::size_t depth = std::min(entries.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < depth; ++i) {
      int g = judgments.grade(qid, entries[i].doc_id);
      if (g > 0) dcg += (std::exp2(static_cast<double>(g)) - 1.0) / std::log2(i + 2.0);
    }
    std::vector<int> grades;
    for (const auto& did : relevant) grades.push_back(judgments.grade(qid, did));
    std::sort(grades.rbegin(), grades.rend());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(grades.size(), static_cast<std::size_t>(k)); ++i)
      idcg += (std::exp2(static_cast<double>(grades[i])) - 1.0) / std::log2(i + 2.0);
    sum += dcg / idcg;
    ++counted;
  }
  out.value = counted > 0 ? sum / counted : 0.0;
  return out;
}

double mrr_at_k(const RunFile& run, const Judgments& judgments, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  require_nonempty(run);
  double sum = 0.0;
  for (const auto& [qid, entries] : run.results) {
    std::size_t depth = std::min(entries.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < depth; ++i)
      if (judgments.grade(qid, entries[i].doc_id) > 0) {
        sum += 1.0 / static_cast<double>(i + 1);
        break;
      }
  }
  return sum / static_cast<double>(run.results.size());
}

RecallResult recall_at_k(const RunFile& run, const Judgments& judgments, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  require_nonempty(run);
  RecallResult out;
  double rec = 0.0, cov = 0.0;
  int counted = 0;
  for (const auto& [qid, entries] : run.results) {
    auto relevant = judgments.relevant_docs(qid);
    if (relevant.empty()) {
      ++out.skipped;
      continue;
    }
    std::unordered_set<std::string> rel(relevant.begin(), relevant.end());
    std::size_t hits = 0;
    std::size_t depth = std::min(entries.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < depth; ++i)
      if (rel.count(entries[i].doc_id)) ++hits;
    double r = static_cast<double>(hits) / static_cast<double>(rel.size());
    rec += r;
    cov += r > 0.0 ? 1.0 : 0.0;
    ++counted;
  }
  if (counted > 0) {
    out.recall = rec / counted;
    out.coverage = cov / counted;
  }
  return out;
}

double hole_rate(const RunFile& run, const Judgments& judgments, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  require_nonempty(run);
  double sum = 0.0;
  for (const auto& [qid, entries] : run.results) {
    std::size_t depth = std::min(entries.size(), static_cast<std::size_t>(k));
    std::size_t holes = 0;
    for (std::size_t i = 0; i < depth; ++i)
      if (judgments.grade(qid, entries[i].doc_id) < 0) ++holes;
    sum += static_cast<double>(holes) / static_cast<double>(depth);
  }
  return sum / static_cast<double>(run.results.size());
}

RunOverlapResult run_overlap(const RunFile& a, const RunFile& b, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  require_nonempty(a);
  require_nonempty(b);
  RunOverlapResult out;
  double sum = 0.0;
  for (const auto& [qid, entries_a] : a.results) {
    auto it = b.results.find(qid);
    if (it == b.results.end()) {
      out.query_mismatch = true;
      continue;
    }
    sum += overlap_at_k(top_ids(entries_a, k), top_ids(it->second, k), k).fraction;
    ++out.shared_queries;
  }
  if (a.results.size() != b.results.size()) out.query_mismatch = true;
  if (out.shared_queries == 0) throw DataError("runs share no queries");
  out.mean = sum / out.shared_queries;
  return out;
}

}  // namespace ance
