#include "ancelab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "ancelab/rng.hpp"

namespace ance {

void Corpus::add(Document d) {
  auto [it, fresh] = index_of.emplace(d.id, docs.size());
  if (!fresh) throw DataError("duplicate doc id: " + d.id);
  docs.push_back(std::move(d));
}

const Document& Corpus::at(const std::string& id) const {
  auto it = index_of.find(id);
  if (it == index_of.end()) throw DataError("unknown doc id: " + id);
  return docs[it->second];
}

void Judgments::set(const std::string& qid, const std::string& did, int grade) {
  if (grade < 0) throw DataError("negative grade for " + qid + " " + did);
  auto [it, fresh] = grades[qid].emplace(did, grade);
  if (!fresh) throw DataError("duplicate judgment for " + qid + " " + did);
}

int Judgments::grade(const std::string& qid, const std::string& did) const {
  auto q = grades.find(qid);
  if (q == grades.end()) return -1;
  auto d = q->second.find(did);
  return d == q->second.end() ? -1 : d->second;
}

std::vector<std::string> Judgments::relevant_docs(const std::string& qid) const {
  std::vector<std::string> out;
  auto q = grades.find(qid);
  if (q == grades.end()) return out;
  for (const auto& [did, g] : q->second)
    if (g > 0) out.push_back(did);
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

FeatureVector featurize(const std::string& text, const FeaturizeOptions& opt) {
  if (opt.dim == 0) throw ConfigError("feature dim must be positive");
  auto toks = tokenize(text);
  std::unordered_map<std::uint32_t, double> counts;
  auto bump = [&](const std::string& term) {
    counts[static_cast<std::uint32_t>(fnv1a64(term) % opt.dim)] += 1.0;
  };
  for (const auto& t : toks) bump(t);
  if (opt.bigrams)
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) bump(toks[i] + "_" + toks[i + 1]);
  FeatureVector fv;
  fv.dim = opt.dim;
  fv.entries.assign(counts.begin(), counts.end());
  std::sort(fv.entries.begin(), fv.entries.end());
  return fv;
}

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw DataError(path + ":" + std::to_string(lineno) + ": malformed JSON line");
  if (!j.is_object())
    throw DataError(path + ":" + std::to_string(lineno) + ": expected a JSON object");
  return j;
}

std::string need_string(const json& j, const char* key, const std::string& path,
                        std::size_t lineno) {
  if (!j.contains(key) || !j[key].is_string())
    throw DataError(path + ":" + std::to_string(lineno) + ": missing string field '" + key + "'");
  return j[key].get<std::string>();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ' ' || c == '\t' || c == '\r') {
      if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open file: " + path);
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    Document d;
    d.id = need_string(j, "id", path, lineno);
    d.text = need_string(j, "text", path, lineno);
    if (j.contains("parent_id")) d.parent_id = need_string(j, "parent_id", path, lineno);
    try {
      c.add(std::move(d));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path);
  for (const auto& d : c.docs) {
    ordered_json j;
    j["id"] = d.id;
    j["text"] = d.text;
    if (!d.parent_id.empty()) j["parent_id"] = d.parent_id;
    os << j.dump() << "\n";
  }
}

std::vector<Query> load_queries(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open file: " + path);
  std::vector<Query> out;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    Query q;
    q.id = need_string(j, "id", path, lineno);
    q.text = need_string(j, "text", path, lineno);
    if (!seen.emplace(q.id, out.size()).second)
      throw DataError(path + ":" + std::to_string(lineno) + ": duplicate query id: " + q.id);
    out.push_back(std::move(q));
  }
  return out;
}

void save_queries(const std::vector<Query>& qs, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path);
  for (const auto& q : qs) {
    ordered_json j;
    j["id"] = q.id;
    j["text"] = q.text;
    os << j.dump() << "\n";
  }
}

Judgments load_judgments(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open file: " + path);
  Judgments out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> f = split_fields(line);
    if (f.size() != 4)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                      std::to_string(f.size()));
    int grade = 0;
    try {
      std::size_t used = 0;
      grade = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad grade '" + f[3] + "'");
    }
    if (grade < 0)
      throw DataError(path + ":" + std::to_string(lineno) + ": negative grade");
    try {
      out.set(f[0], f[2], grade);
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_judgments(const Judgments& j, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path);
  for (const auto& [qid, docs] : j.grades)
    for (const auto& [did, g] : docs) os << qid << " 0 " << did << " " << g << "\n";
}

void validate_judgments(const Judgments& j, const Corpus& c, const std::vector<Query>& qs) {
  std::unordered_map<std::string, bool> qids;
  for (const auto& q : qs) qids[q.id] = true;
  for (const auto& [qid, docs] : j.grades) {
    if (!qids.count(qid)) throw DataError("judgment references unknown query id: " + qid);
    for (const auto& [did, g] : docs) {
      (void)g;
      if (!c.contains(did)) throw DataError("judgment references unknown doc id: " + did);
    }
  }
}

std::vector<Document> split_passages(const Document& doc, const PassageOptions& opt) {
  if (opt.window <= 0 || opt.stride <= 0 || opt.max_passages <= 0)
    throw ConfigError("passage window, stride, and max_passages must be positive");
  auto toks = tokenize(doc.text);
  std::vector<Document> out;
  std::size_t start = 0;
  int k = 0;
  do {
    std::size_t stop = std::min(toks.size(), start + static_cast<std::size_t>(opt.window));
    std::string text;
    for (std::size_t i = start; i < stop; ++i) {
      if (i > start) text.push_back(' ');
      text += toks[i];
    }
    out.push_back(Document{doc.id + "#p" + std::to_string(k), std::move(text), doc.id});
    ++k;
    start += static_cast<std::size_t>(opt.stride);
  } while (start < toks.size() && k < opt.max_passages);
  return out;
}

Corpus split_corpus(const Corpus& c, const PassageOptions& opt, bool first_only) {
  Corpus out;
  for (const auto& d : c.docs) {
    auto parts = split_passages(d, opt);
    if (first_only) parts.resize(1);
    for (auto& p : parts) out.add(std::move(p));
  }
  return out;
}

namespace {

// Sizes of the per-topic token pools. The shared pool is deliberately larger
// than the sided pools so term matching stays noisy at moderate mismatch
// rates while embeddings still pick up the topic.
constexpr int kQueryPool = 24;
constexpr int kDocPool = 24;
constexpr int kSharedPool = 48;

std::string pool_token(char side, int topic, int j) {
  return std::string(1, side) + std::to_string(topic) + "x" + std::to_string(j);
}

std::string draw_text(Rng& rng, int len, int topic, char side, int side_pool,
                      double mismatch_rate) {
  std::string text;
  for (int i = 0; i < len; ++i) {
    std::string tok;
    if (rng.unit() < mismatch_rate)
      tok = pool_token(side, topic, static_cast<int>(rng.below(side_pool)));
    else
      tok = pool_token('s', topic, static_cast<int>(rng.below(kSharedPool)));
    if (i > 0) text.push_back(' ');
    text += tok;
  }
  return text;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.corpus_size <= 0 || spec.num_queries <= 0 || spec.num_topics <= 0)
    throw ConfigError("synthetic sizes must be positive");
  if (spec.num_queries > spec.corpus_size)
    throw ConfigError("num_queries cannot exceed corpus_size");
  if (spec.num_topics > spec.corpus_size)
    throw ConfigError("num_topics cannot exceed corpus_size");
  if (spec.doc_len <= 0 || spec.query_len <= 0)
    throw ConfigError("doc_len and query_len must be positive");
  if (spec.mismatch_rate < 0.0 || spec.mismatch_rate > 1.0)
    throw ConfigError("mismatch_rate must be in [0, 1]");

  SyntheticData out;
  Rng rng(mix_seed(spec.seed, 0x5e7da7a));
  for (int i = 0; i < spec.num_queries; ++i) {
    int topic = i % spec.num_topics;
    out.queries.push_back(
        Query{"q" + std::to_string(i),
              draw_text(rng, spec.query_len, topic, 'q', kQueryPool, spec.mismatch_rate)});
  }
  for (int i = 0; i < spec.corpus_size; ++i) {
    int topic = i % spec.num_topics;
    // Distractors are lexical traps: they mimic the query vocabulary of
    // their topic (keyword stuffing) without drawing from the doc pool, so
    // term matching rates them above the relevant document while a dense
    // model can learn to push the whole class down.
    std::string text =
        i < spec.num_queries
            ? draw_text(rng, spec.doc_len, topic, 'd', kDocPool, spec.mismatch_rate)
            : draw_text(rng, spec.doc_len, topic, 'q', kQueryPool, spec.mismatch_rate);
    out.corpus.add(Document{"d" + std::to_string(i), std::move(text), ""});
  }
  for (int i = 0; i < spec.num_queries; ++i)
    out.judgments.set("q" + std::to_string(i), "d" + std::to_string(i), 1);
  return out;
}

}  // namespace ance
