#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ancelab/analysis.hpp"
#include "ancelab/corpus.hpp"
#include "ancelab/dense_index.hpp"
#include "ancelab/encoder.hpp"
#include "ancelab/eval.hpp"
#include "ancelab/negatives.hpp"
#include "ancelab/sparse.hpp"
#include "ancelab/training.hpp"
#include "ancelab/types.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ance::DataError("cannot open file for writing: " + path);
  return os;
}

struct GenOpts {
  std::string out_dir;
  ance::SyntheticSpec spec;
};

void cmd_gen_data(const GenOpts& o) {
  auto data = ance::generate_synthetic(o.spec);
  fs::create_directories(o.out_dir);
  ance::save_corpus(data.corpus, o.out_dir + "/corpus.jsonl");
  ance::save_queries(data.queries, o.out_dir + "/queries.jsonl");
  ance::save_judgments(data.judgments, o.out_dir + "/qrels.txt");
  std::cout << "wrote " << data.corpus.size() << " docs, " << data.queries.size()
            << " queries to " << o.out_dir << "\n";
}

struct SparseOpts {
  std::string corpus;
  std::string out;
};

void cmd_build_sparse(const SparseOpts& o) {
  auto corpus = ance::load_corpus(o.corpus);
  auto idx = ance::build_inverted_index(corpus);
  if (fs::path(o.out).has_parent_path())
    fs::create_directories(fs::path(o.out).parent_path());
  ance::save_inverted_index(idx, o.out);
  std::cout << "indexed " << idx.num_docs() << " docs, " << idx.postings.size()
            << " terms to " << o.out << "\n";
}

struct TrainOpts {
  std::string corpus, queries, qrels, out_dir;
  std::string sampler = "rand";
  std::string optimizer = "adam";
  std::string sim = "dot";
  std::string resume;
  std::int64_t resume_step = 0;
  ance::TrainConfig cfg;
};

ance::TrainConfig build_train_config(const TrainOpts& o) {
  ance::TrainConfig cfg = o.cfg;
  cfg.sampler.kind = ance::sampler_kind_from_string(o.sampler);
  if (o.optimizer == "sgd")
    cfg.optimizer = ance::OptimizerKind::kSgd;
  else if (o.optimizer == "adam")
    cfg.optimizer = ance::OptimizerKind::kAdam;
  else
    throw ance::ConfigError("unknown optimizer: " + o.optimizer);
  cfg.sim = ance::sim_kind_from_string(o.sim);
  cfg.warmup = cfg.warmup_steps > 0 ? ance::WarmupKind::kBm25 : ance::WarmupKind::kNone;
  return cfg;
}

void cmd_train(const TrainOpts& o) {
  ance::TrainConfig cfg = build_train_config(o);
  auto corpus = ance::load_corpus(o.corpus);
  auto queries = ance::load_queries(o.queries);
  auto judgments = ance::load_judgments(o.qrels);
  ance::validate_judgments(judgments, corpus, queries);

  std::unique_ptr<ance::Checkpoint> resume;
  if (!o.resume.empty()) {
    resume = std::make_unique<ance::Checkpoint>();
    resume->step = o.resume_step;
    resume->params = ance::load_checkpoint(o.resume);
  }
  auto result = ance::run_training(cfg, corpus, queries, judgments, o.out_dir, resume.get());
  std::cout << "trained to step " << result.final.step << ", "
            << result.checkpoints.size() << " checkpoints in " << o.out_dir << "\n";
}

struct EncodeOpts {
  std::string checkpoint, corpus, out;
  std::int64_t version = 0;
  bool split_passages = false;
  bool firstp = false;
  ance::PassageOptions passage;
  int ivf_nlist = 0;
  int ivf_iters = 10;
  std::uint64_t ivf_seed = 13;
};

void cmd_encode(const EncodeOpts& o) {
  auto params = ance::load_checkpoint(o.checkpoint);
  auto corpus = ance::load_corpus(o.corpus);
  if (o.split_passages || o.firstp)
    corpus = ance::split_corpus(corpus, o.passage, o.firstp);
  auto idx = ance::encode_corpus(params, corpus, o.version);
  if (o.ivf_nlist > 0) ance::build_ivf(idx, o.ivf_nlist, o.ivf_iters, o.ivf_seed);
  if (fs::path(o.out).has_parent_path())
    fs::create_directories(fs::path(o.out).parent_path());
  ance::save_dense_index(idx, o.out);
  std::cout << "encoded " << idx.size() << " docs at version " << idx.version << " to "
            << o.out << "\n";
}

struct SearchOpts {
  std::string index, checkpoint, queries, out;
  std::string mode = "exact";
  int k = 100;
  int nprobe = 8;
  std::string tag = "ance";
};

void cmd_search(const SearchOpts& o) {
  auto idx = ance::load_dense_index(o.index);
  auto params = ance::load_checkpoint(o.checkpoint);
  auto queries = ance::load_queries(o.queries);
  ance::FeaturizeOptions fo{static_cast<std::uint32_t>(params.feature_dim()),
                            params.use_bigrams};
  ance::RunFile run;
  run.tag = o.tag;
  for (const auto& q : queries) {
    ance::Embedding qe = ance::encode(params, ance::featurize(q.text, fo));
    std::vector<ance::ScoredDoc> hits;
    if (o.mode == "exact")
      hits = ance::search_exact(idx, qe, o.k, params.sim);
    else if (o.mode == "ivf")
      hits = ance::search_ivf(idx, qe, o.k, o.nprobe, params.sim);
    else
      hits = ance::search_maxp(idx, qe, o.k, params.sim);
    auto& entries = run.results[q.id];
    for (std::size_t i = 0; i < hits.size(); ++i)
      entries.push_back(ance::RunEntry{hits[i].id, hits[i].score, static_cast<int>(i) + 1});
  }
  if (fs::path(o.out).has_parent_path())
    fs::create_directories(fs::path(o.out).parent_path());
  ance::write_run(run, o.out);
  std::cout << "wrote run for " << queries.size() << " queries to " << o.out << "\n";
}

struct EvalOpts {
  std::string run, qrels, out;
};

void cmd_eval(const EvalOpts& o) {
  auto run = ance::read_run(o.run);
  auto judgments = ance::load_judgments(o.qrels);
  auto ndcg = ance::ndcg_at_k(run, judgments, 10);
  double mrr = ance::mrr_at_k(run, judgments, 10);
  auto r10 = ance::recall_at_k(run, judgments, 10);
  auto r100 = ance::recall_at_k(run, judgments, 100);
  double hole10 = ance::hole_rate(run, judgments, 10);

  ordered_json j;
  j["ndcg@10"] = ndcg.value;
  j["ndcg_skipped"] = ndcg.skipped;
  j["mrr@10"] = mrr;
  j["recall@10"] = r10.recall;
  j["coverage@10"] = r10.coverage;
  j["recall@100"] = r100.recall;
  j["coverage@100"] = r100.coverage;
  j["recall_skipped"] = r10.skipped;
  j["hole_rate@10"] = hole10;
  for (const auto& [key, val] : j.items()) {
    if (val.is_number_float())
      std::cout << key << " " << fmt(val.get<double>()) << "\n";
    else
      std::cout << key << " " << val.dump() << "\n";
  }
  if (!o.out.empty()) open_out(o.out) << j.dump(2) << "\n";
}

struct AnalyzeOpts {
  std::string mode;
  std::string checkpoint, index, corpus, queries, qrels, metrics, out;
  std::string sampler = "ance";
  int k = 100;
  int batch_size = 8;
  int pool_k = 200;
  int per_pos = 1;
  std::uint64_t sampler_seed = 7;
  std::vector<double> quantiles{0.5, 0.9, 0.99};
  int max_queries = 16;
};

void require_opt(const std::string& value, const std::string& name, const std::string& mode) {
  if (value.empty())
    throw ance::ConfigError("analyze mode '" + mode + "' requires --" + name);
}

void cmd_analyze(const AnalyzeOpts& o) {
  if (o.mode == "overlap") {
    require_opt(o.checkpoint, "checkpoint", o.mode);
    require_opt(o.index, "index", o.mode);
    require_opt(o.corpus, "corpus", o.mode);
    require_opt(o.queries, "queries", o.mode);
    require_opt(o.qrels, "qrels", o.mode);
    auto params = ance::load_checkpoint(o.checkpoint);
    auto corpus = ance::load_corpus(o.corpus);
    auto queries = ance::load_queries(o.queries);
    auto judgments = ance::load_judgments(o.qrels);
    auto dense = std::make_shared<ance::DenseIndex>(ance::load_dense_index(o.index));

    ance::SamplerConfig scfg;
    scfg.kind = ance::sampler_kind_from_string(o.sampler);
    scfg.pool_k = o.pool_k;
    scfg.per_pos = o.per_pos;
    scfg.seed = o.sampler_seed;

    std::optional<ance::InvertedIndex> sparse;
    if (scfg.kind == ance::SamplerKind::kBm25Top ||
        scfg.kind == ance::SamplerKind::kBm25PlusRand)
      sparse = ance::build_inverted_index(corpus);

    ance::SamplerContext ctx;
    ctx.corpus = &corpus;
    ctx.judgments = &judgments;
    ctx.params = &params;
    ctx.sparse = sparse ? &*sparse : nullptr;
    ctx.dense = dense;

    auto rep = ance::negative_overlap_diagnostic(scfg, ctx, queries, o.k, o.batch_size);
    if (!o.out.empty()) {
      auto os = open_out(o.out);
      os << "query,pool_in_topk\n";
      for (std::size_t i = 0; i < rep.per_query.size(); ++i)
        os << rep.query_ids[i] << "," << fmt(rep.per_query[i]) << "\n";
    }
    std::cout << "sampler " << rep.sampler << " mean_overlap@" << rep.k << " "
              << fmt(rep.mean) << " over " << rep.per_query.size() << " queries\n";
  } else if (o.mode == "gradnorm") {
    require_opt(o.metrics, "metrics", o.mode);
    auto metrics = ance::read_metrics_jsonl(o.metrics);
    if (!o.out.empty()) {
      auto os = open_out(o.out);
      os << "step,loss,grad_norm_preclip,sampler\n";
      for (const auto& m : metrics)
        os << m.step << "," << fmt(m.loss) << "," << fmt(m.grad_norm_preclip) << ","
           << m.sampler << "\n";
    }
    auto bound = ance::lossbound_check(metrics);
    std::cout << "steps " << metrics.size() << " median_grad_norm "
              << fmt(bound.median_norm) << " lossbound_ok " << (bound.ok ? 1 : 0) << "\n";
  } else if (o.mode == "scoredist") {
    require_opt(o.checkpoint, "checkpoint", o.mode);
    require_opt(o.index, "index", o.mode);
    require_opt(o.queries, "queries", o.mode);
    auto params = ance::load_checkpoint(o.checkpoint);
    auto idx = ance::load_dense_index(o.index);
    auto queries = ance::load_queries(o.queries);
    std::ofstream os;
    if (!o.out.empty()) {
      os = open_out(o.out);
      os << "query,min,max";
      for (double q : o.quantiles) os << ",q" << fmt(q);
      os << ",top_band_fraction\n";
    }
    double band_sum = 0.0;
    std::size_t n = std::min<std::size_t>(queries.size(),
                                          static_cast<std::size_t>(o.max_queries));
    for (std::size_t i = 0; i < n; ++i) {
      auto dist = ance::score_distribution(params, idx, queries[i].text, o.quantiles);
      band_sum += dist.top_band_fraction;
      if (os.is_open()) {
        os << queries[i].id << "," << fmt(dist.min) << "," << fmt(dist.max);
        for (double qv : dist.quantile_values) os << "," << fmt(qv);
        os << "," << fmt(dist.top_band_fraction) << "\n";
      }
    }
    if (n == 0) throw ance::DataError("no queries to analyze");
    std::cout << "mean_top_band_fraction " << fmt(band_sum / static_cast<double>(n))
              << " over " << n << " queries\n";
  } else if (o.mode == "variance") {
    require_opt(o.checkpoint, "checkpoint", o.mode);
    require_opt(o.index, "index", o.mode);
    require_opt(o.corpus, "corpus", o.mode);
    require_opt(o.queries, "queries", o.mode);
    require_opt(o.qrels, "qrels", o.mode);
    auto params = ance::load_checkpoint(o.checkpoint);
    auto idx = ance::load_dense_index(o.index);
    auto corpus = ance::load_corpus(o.corpus);
    auto queries = ance::load_queries(o.queries);
    auto judgments = ance::load_judgments(o.qrels);
    ance::FeaturizeOptions fo{static_cast<std::uint32_t>(params.feature_dim()),
                              params.use_bigrams};
    std::ofstream os;
    if (!o.out.empty()) {
      os = open_out(o.out);
      os << "query,num_negatives,trace_uniform,trace_oracle\n";
    }
    std::size_t emitted = 0;
    for (const auto& q : queries) {
      if (emitted >= static_cast<std::size_t>(o.max_queries)) break;
      auto rel = judgments.relevant_docs(q.id);
      std::string pos;
      for (const auto& did : rel)
        if (corpus.contains(did)) {
          pos = did;
          break;
        }
      if (pos.empty()) continue;
      ance::Embedding qe = ance::encode(params, ance::featurize(q.text, fo));
      auto hits = ance::search_exact(idx, qe, o.pool_k, params.sim);
      std::vector<ance::FeatureVector> negs;
      for (const auto& h : hits) {
        if (std::find(rel.begin(), rel.end(), h.id) != rel.end()) continue;
        negs.push_back(ance::featurize(corpus.at(h.id).text, fo));
      }
      if (negs.size() < 2) continue;
      auto qfv = ance::featurize(q.text, fo);
      auto pfv = ance::featurize(corpus.at(pos).text, fo);
      auto norms = ance::grad_norms_for_negatives(params, qfv, pfv, negs);

      // Mean gradient over the enumerated negatives, one triple per negative.
      ance::GradientBuffer mean_grad = ance::GradientBuffer::zeros_like(params);
      double nn = static_cast<double>(negs.size());
      for (const auto& neg : negs) {
        ance::TrainTriple t;
        t.query = qfv;
        t.positive = pfv;
        t.negatives.push_back(neg);
        ance::backward_accumulate(params, t, 1.0 / nn, mean_grad);
      }
      double mean_sq = mean_grad.squared_norm();
      double sum_sq = 0.0, sum_norm = 0.0;
      for (double g : norms) {
        sum_sq += g * g;
        sum_norm += g;
      }
      // Uniform draw: Tr(V) = (1/n) sum |g|^2 - |mean|^2; oracle p* ~ |g|:
      // Tr(V) = (sum |g| / n)^2 - |mean|^2.
      double trace_u = sum_sq / nn - mean_sq;
      double trace_o = (sum_norm / nn) * (sum_norm / nn) - mean_sq;
      if (os.is_open())
        os << q.id << "," << negs.size() << "," << fmt(trace_u) << "," << fmt(trace_o)
           << "\n";
      ++emitted;
    }
    if (emitted == 0) throw ance::DataError("no query had enough negatives to analyze");
    std::cout << "variance report for " << emitted << " queries\n";
  } else if (o.mode == "asyncgap") {
    require_opt(o.metrics, "metrics", o.mode);
    auto metrics = ance::read_metrics_jsonl(o.metrics);
    auto rep = ance::async_gap_report(metrics);
    if (!o.out.empty()) {
      auto os = open_out(o.out);
      os << "step,gap\n";
      for (std::size_t i = 0; i < rep.steps.size(); ++i)
        os << rep.steps[i] << "," << rep.gaps[i] << "\n";
    }
    std::cout << "mean_gap " << fmt(rep.mean_gap) << " max_gap " << rep.max_gap << " over "
              << rep.gaps.size() << " steps\n";
  } else {
    throw ance::ConfigError("unknown analyze mode: " + o.mode);
  }
}

struct SweepOpts {
  std::string corpus, queries, qrels, out_dir;
  std::string test_queries, test_qrels;
  std::vector<int> intervals{1, 10, 100};
  TrainOpts train;
  int eval_k = 10;
};

void cmd_sweep_async(const SweepOpts& o) {
  auto corpus = ance::load_corpus(o.corpus);
  auto queries = ance::load_queries(o.queries);
  auto judgments = ance::load_judgments(o.qrels);
  auto test_queries =
      o.test_queries.empty() ? queries : ance::load_queries(o.test_queries);
  auto test_judgments =
      o.test_qrels.empty() ? judgments : ance::load_judgments(o.test_qrels);

  fs::create_directories(o.out_dir);
  auto csv = open_out(o.out_dir + "/sweep.csv");
  csv << "refresh_interval,mean_gap,max_gap,ndcg@10,mrr@10\n";
  std::cout << "refresh_interval mean_gap max_gap ndcg@10 mrr@10\n";

  for (int m : o.intervals) {
    ance::TrainConfig cfg = build_train_config(o.train);
    cfg.sampler.kind = ance::SamplerKind::kAnce;
    cfg.refresh_interval = m;
    std::string run_dir = o.out_dir + "/m" + std::to_string(m);
    auto result = ance::run_training(cfg, corpus, queries, judgments, run_dir);
    auto gap = ance::async_gap_report(result.metrics);

    auto idx = ance::encode_corpus(result.final.params, corpus, result.final.step);
    ance::FeaturizeOptions fo{static_cast<std::uint32_t>(result.final.params.feature_dim()),
                              result.final.params.use_bigrams};
    ance::RunFile run;
    run.tag = "sweep-m" + std::to_string(m);
    for (const auto& q : test_queries) {
      ance::Embedding qe =
          ance::encode(result.final.params, ance::featurize(q.text, fo));
      auto hits = ance::search_exact(idx, qe, o.eval_k, result.final.params.sim);
      auto& entries = run.results[q.id];
      for (std::size_t i = 0; i < hits.size(); ++i)
        entries.push_back(
            ance::RunEntry{hits[i].id, hits[i].score, static_cast<int>(i) + 1});
    }
    auto ndcg = ance::ndcg_at_k(run, test_judgments, 10);
    double mrr = ance::mrr_at_k(run, test_judgments, 10);
    csv << m << "," << fmt(gap.mean_gap) << "," << gap.max_gap << "," << fmt(ndcg.value)
        << "," << fmt(mrr) << "\n";
    std::cout << m << " " << fmt(gap.mean_gap) << " " << gap.max_gap << " "
              << fmt(ndcg.value) << " " << fmt(mrr) << "\n";
  }
}

struct DumpOpts {
  std::string index, out;
};

void cmd_dump_emb(const DumpOpts& o) {
  auto idx = ance::load_dense_index(o.index);
  auto os = open_out(o.out);
  os << "id";
  for (Eigen::Index d = 0; d < idx.embed_dim(); ++d) os << ",e" << d;
  os << "\n";
  for (std::size_t i = 0; i < idx.size(); ++i) {
    os << idx.ids[i];
    for (Eigen::Index d = 0; d < idx.embed_dim(); ++d)
      os << "," << fmt(static_cast<double>(idx.emb(static_cast<Eigen::Index>(i), d)));
    os << "\n";
  }
  std::cout << "dumped " << idx.size() << " embeddings to " << o.out << "\n";
}

void add_config(CLI::App* sub) {
  static std::string sink;
  sub->add_option("--config", sink, "flat key=value config file; command-line flags win");
}

// Config files are expanded into argv tokens before parsing: each key=value
// line becomes --key=value unless --key was given explicitly, so command-line
// flags keep precedence and unknown keys fail like any unknown option.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream is(path);
  if (!is) throw ance::ConfigError("cannot open config file: " + path);
  auto trim = [](const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  auto given = [&args](const std::string& flag) {
    return std::any_of(args.begin(), args.end(), [&flag](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string entry = trim(line);
    if (entry.empty() || entry[0] == '#') continue;
    auto eq = entry.find('=');
    std::string key = eq == std::string::npos ? std::string{} : trim(entry.substr(0, eq));
    if (key.empty())
      throw ance::ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    if (key == "config") continue;
    if (!given("--" + key)) args.push_back("--" + key + "=" + trim(entry.substr(eq + 1)));
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale dense retrieval lab: dual encoder training with "
               "asynchronously refreshed ANN negatives"};
  app.require_subcommand(1);

  GenOpts gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic topic-structured dataset");
  add_config(g);
  g->add_option("--out-dir", gen.out_dir, "output directory")->required();
  g->add_option("--corpus-size", gen.spec.corpus_size, "number of docs");
  g->add_option("--num-queries", gen.spec.num_queries, "number of queries");
  g->add_option("--num-topics", gen.spec.num_topics, "number of topics");
  g->add_option("--doc-len", gen.spec.doc_len, "tokens per doc");
  g->add_option("--query-len", gen.spec.query_len, "tokens per query");
  g->add_option("--mismatch-rate", gen.spec.mismatch_rate,
                "probability of side-specific vocabulary per token");
  g->add_option("--seed", gen.spec.seed, "generator seed");
  g->callback([&] { cmd_gen_data(gen); });

  SparseOpts sparse;
  auto* bs = app.add_subcommand("build-sparse", "build and save the inverted index");
  add_config(bs);
  bs->add_option("--corpus", sparse.corpus, "corpus jsonl")->required();
  bs->add_option("--out", sparse.out, "index output path")->required();
  bs->callback([&] { cmd_build_sparse(sparse); });

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "train the dual encoder");
  add_config(t);
  t->add_option("--corpus", tr.corpus, "corpus jsonl")->required();
  t->add_option("--queries", tr.queries, "queries jsonl")->required();
  t->add_option("--qrels", tr.qrels, "qrels file")->required();
  t->add_option("--out-dir", tr.out_dir, "checkpoints and metrics directory")->required();
  t->add_option("--sampler", tr.sampler, "rand|nce|bm25|bm25rand|ance");
  t->add_option("--optimizer", tr.optimizer, "sgd|adam");
  t->add_option("--sim", tr.sim, "dot|cosine");
  t->add_option("--lr", tr.cfg.lr, "learning rate");
  t->add_option("--batch-size", tr.cfg.batch_size, "queries per batch");
  t->add_option("--grad-accum", tr.cfg.grad_accum, "batches per optimizer step");
  t->add_option("--clip-norm", tr.cfg.clip_norm, "global gradient norm cap");
  t->add_option("--refresh-interval", tr.cfg.refresh_interval,
                "batches between checkpoints/refreshes");
  t->add_option("--warmup-steps", tr.cfg.warmup_steps, "BM25 warm-up batches");
  t->add_option("--max-steps", tr.cfg.max_steps, "total batches (overrides epochs)");
  t->add_option("--epochs", tr.cfg.epochs, "passes over the queries");
  t->add_option("--seed", tr.cfg.seed, "run seed");
  t->add_option("--feature-dim", tr.cfg.feature_dim, "hashed feature dimension");
  t->add_option("--embed-dim", tr.cfg.embed_dim, "embedding dimension");
  t->add_option("--layernorm", tr.cfg.use_layernorm, "apply layer norm (true|false)");
  t->add_option("--bigrams", tr.cfg.use_bigrams, "hash token bigrams too (true|false)");
  t->add_option("--pool-k", tr.cfg.sampler.pool_k, "candidate pool depth");
  t->add_option("--per-pos", tr.cfg.sampler.per_pos, "negatives per positive");
  t->add_option("--sampler-seed", tr.cfg.sampler.seed, "sampler seed");
  t->add_flag("--sync", tr.cfg.synchronous, "block on every index refresh");
  t->add_option("--refresh", tr.cfg.refresh_enabled,
                "refresh the ANN index during training (true|false)");
  t->add_option("--divergence-threshold", tr.cfg.divergence_threshold,
                "abort when |loss| exceeds this");
  t->add_option("--resume", tr.resume, "checkpoint to resume from");
  t->add_option("--resume-step", tr.resume_step, "step the resume checkpoint was taken at");
  t->callback([&] { cmd_train(tr); });

  EncodeOpts en;
  auto* e = app.add_subcommand("encode", "encode a corpus into a dense index");
  add_config(e);
  e->add_option("--checkpoint", en.checkpoint, "encoder checkpoint")->required();
  e->add_option("--corpus", en.corpus, "corpus jsonl")->required();
  e->add_option("--out", en.out, "index output path")->required();
  e->add_option("--version", en.version, "version stamp for the index");
  e->add_flag("--split-passages", en.split_passages, "index sliding-window passages");
  e->add_flag("--firstp", en.firstp, "index only the first passage of each doc");
  e->add_option("--window", en.passage.window, "passage window in tokens");
  e->add_option("--stride", en.passage.stride, "passage stride in tokens");
  e->add_option("--max-passages", en.passage.max_passages, "passages per doc cap");
  e->add_option("--ivf-nlist", en.ivf_nlist, "IVF cluster count (0 = flat only)");
  e->add_option("--ivf-iters", en.ivf_iters, "k-means iterations");
  e->add_option("--ivf-seed", en.ivf_seed, "k-means seed");
  e->callback([&] { cmd_encode(en); });

  SearchOpts se;
  auto* s = app.add_subcommand("search", "retrieve top-k per query into a TREC run");
  add_config(s);
  s->add_option("--index", se.index, "dense index path")->required();
  s->add_option("--checkpoint", se.checkpoint, "encoder checkpoint")->required();
  s->add_option("--queries", se.queries, "queries jsonl")->required();
  s->add_option("--out", se.out, "run output path")->required();
  s->add_option("--mode", se.mode, "exact|ivf|maxp")
      ->check(CLI::IsMember({"exact", "ivf", "maxp"}));
  s->add_option("--k", se.k, "results per query");
  s->add_option("--nprobe", se.nprobe, "IVF clusters to scan");
  s->add_option("--tag", se.tag, "run tag");
  s->callback([&] { cmd_search(se); });

  EvalOpts ev;
  auto* ee = app.add_subcommand("eval", "score a run against qrels");
  add_config(ee);
  ee->add_option("--run", ev.run, "TREC run file")->required();
  ee->add_option("--qrels", ev.qrels, "qrels file")->required();
  ee->add_option("--out", ev.out, "also write metrics as JSON");
  ee->callback([&] { cmd_eval(ev); });

  AnalyzeOpts an;
  auto* a = app.add_subcommand("analyze", "diagnostics over checkpoints, indexes, and metrics");
  add_config(a);
  a->add_option("--mode", an.mode, "overlap|gradnorm|scoredist|variance|asyncgap")
      ->required()
      ->check(CLI::IsMember({"overlap", "gradnorm", "scoredist", "variance", "asyncgap"}));
  a->add_option("--checkpoint", an.checkpoint, "encoder checkpoint");
  a->add_option("--index", an.index, "dense index path");
  a->add_option("--corpus", an.corpus, "corpus jsonl");
  a->add_option("--queries", an.queries, "queries jsonl");
  a->add_option("--qrels", an.qrels, "qrels file");
  a->add_option("--metrics", an.metrics, "metrics jsonl from a training run");
  a->add_option("--out", an.out, "CSV report path");
  a->add_option("--sampler", an.sampler, "sampler to diagnose (overlap mode)");
  a->add_option("--k", an.k, "top-k depth");
  a->add_option("--batch-size", an.batch_size, "batch size for in-batch samplers");
  a->add_option("--pool-k", an.pool_k, "candidate pool depth");
  a->add_option("--per-pos", an.per_pos, "negatives per positive");
  a->add_option("--sampler-seed", an.sampler_seed, "sampler seed");
  a->add_option("--quantiles", an.quantiles, "score quantiles")->delimiter(',');
  a->add_option("--max-queries", an.max_queries, "cap on analyzed queries");
  a->callback([&] { cmd_analyze(an); });

  SweepOpts sw;
  auto* w = app.add_subcommand("sweep-async",
                               "train at several refresh intervals and tabulate gap vs quality");
  add_config(w);
  w->add_option("--corpus", sw.corpus, "corpus jsonl")->required();
  w->add_option("--queries", sw.queries, "train queries jsonl")->required();
  w->add_option("--qrels", sw.qrels, "train qrels")->required();
  w->add_option("--out-dir", sw.out_dir, "sweep output directory")->required();
  w->add_option("--test-queries", sw.test_queries, "held-out queries (default: train)");
  w->add_option("--test-qrels", sw.test_qrels, "held-out qrels (default: train)");
  w->add_option("--intervals", sw.intervals, "refresh intervals to sweep")->delimiter(',');
  w->add_option("--lr", sw.train.cfg.lr, "learning rate");
  w->add_option("--optimizer", sw.train.optimizer, "sgd|adam");
  w->add_option("--batch-size", sw.train.cfg.batch_size, "queries per batch");
  w->add_option("--grad-accum", sw.train.cfg.grad_accum, "batches per optimizer step");
  w->add_option("--clip-norm", sw.train.cfg.clip_norm, "global gradient norm cap");
  w->add_option("--warmup-steps", sw.train.cfg.warmup_steps, "BM25 warm-up batches");
  w->add_option("--max-steps", sw.train.cfg.max_steps, "total batches");
  w->add_option("--epochs", sw.train.cfg.epochs, "passes over the queries");
  w->add_option("--seed", sw.train.cfg.seed, "run seed");
  w->add_option("--feature-dim", sw.train.cfg.feature_dim, "hashed feature dimension");
  w->add_option("--embed-dim", sw.train.cfg.embed_dim, "embedding dimension");
  w->add_option("--pool-k", sw.train.cfg.sampler.pool_k, "candidate pool depth");
  w->add_option("--per-pos", sw.train.cfg.sampler.per_pos, "negatives per positive");
  w->add_option("--sampler-seed", sw.train.cfg.sampler.seed, "sampler seed");
  w->add_flag("--sync", sw.train.cfg.synchronous, "block on every index refresh");
  w->callback([&] { cmd_sweep_async(sw); });

  DumpOpts du;
  auto* d = app.add_subcommand("dump-emb", "dump index embeddings as CSV");
  add_config(d);
  d->add_option("--index", du.index, "dense index path")->required();
  d->add_option("--out", du.out, "CSV output path")->required();
  d->callback([&] { cmd_dump_emb(du); });

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const ance::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const ance::DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const ance::NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
