#include "ancelab/training.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include <json.hpp>

#include "ancelab/corpus.hpp"
#include "ancelab/dense_index.hpp"

namespace ance {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void validate_config(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (cfg.grad_accum < 1) throw ConfigError("grad_accum must be at least 1");
  if (cfg.refresh_interval < 1) throw ConfigError("refresh_interval must be at least 1");
  if (cfg.warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (cfg.max_steps < 0 || cfg.epochs < 0) throw ConfigError("step counts must be non-negative");
}

void adam_array(Eigen::Map<Eigen::ArrayXd> theta, Eigen::Map<Eigen::ArrayXd> m,
                Eigen::Map<Eigen::ArrayXd> v, const Eigen::Map<const Eigen::ArrayXd> g,
                double lr, double bc1, double bc2) {
  m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
  v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.square();
  theta -= lr * (m / bc1) / ((v / bc2).sqrt() + kAdamEps);
}

using MapA = Eigen::Map<Eigen::ArrayXd>;
using CMapA = Eigen::Map<const Eigen::ArrayXd>;

}  // namespace

void apply_update(TrainState& state, GradientBuffer& grad, const TrainConfig& cfg) {
  double preclip = grad.norm();
  if (!std::isfinite(preclip)) throw NumericError("non-finite gradient in optimizer update");
  state.last_preclip_norm = preclip;
  if (cfg.clip_norm > 0.0 && preclip > cfg.clip_norm) grad.scale(cfg.clip_norm / preclip);

  EncoderParams& p = state.params;
  if (cfg.optimizer == OptimizerKind::kSgd) {
    p.W -= cfg.lr * grad.W;
    if (p.use_layernorm) {
      p.ln_gain -= cfg.lr * grad.ln_gain;
      p.ln_bias -= cfg.lr * grad.ln_bias;
    }
    return;
  }

  AdamMoments& a = state.adam;
  if (a.m_w.size() == 0) {
    a.m_w = RowMatrixXd::Zero(p.W.rows(), p.W.cols());
    a.v_w = RowMatrixXd::Zero(p.W.rows(), p.W.cols());
    a.m_gain = Eigen::VectorXd::Zero(p.embed_dim());
    a.v_gain = Eigen::VectorXd::Zero(p.embed_dim());
    a.m_bias = Eigen::VectorXd::Zero(p.embed_dim());
    a.v_bias = Eigen::VectorXd::Zero(p.embed_dim());
  }
  a.t += 1;
  double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(a.t));
  double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(a.t));
  adam_array(MapA(p.W.data(), p.W.size()), MapA(a.m_w.data(), a.m_w.size()),
             MapA(a.v_w.data(), a.v_w.size()), CMapA(grad.W.data(), grad.W.size()), cfg.lr,
             bc1, bc2);
  if (p.use_layernorm) {
    adam_array(MapA(p.ln_gain.data(), p.ln_gain.size()), MapA(a.m_gain.data(), a.m_gain.size()),
               MapA(a.v_gain.data(), a.v_gain.size()),
               CMapA(grad.ln_gain.data(), grad.ln_gain.size()), cfg.lr, bc1, bc2);
    adam_array(MapA(p.ln_bias.data(), p.ln_bias.size()), MapA(a.m_bias.data(), a.m_bias.size()),
               MapA(a.v_bias.data(), a.v_bias.size()),
               CMapA(grad.ln_bias.data(), grad.ln_bias.size()), cfg.lr, bc1, bc2);
  }
}

void weighted_step(TrainState& state, const std::vector<WeightedTriple>& triples,
                   const TrainConfig& cfg) {
  if (triples.empty()) throw ConfigError("weighted_step needs at least one triple");
  GradientBuffer grad = GradientBuffer::zeros_like(state.params);
  double n = static_cast<double>(triples.size());
  double loss = 0.0;
  for (const auto& wt : triples) {
    if (!(wt.prob > 0.0)) throw ConfigError("sampling probability must be positive");
    if (wt.pool_size < 1) throw ConfigError("pool_size must be at least 1");
    double w = 1.0 / (static_cast<double>(wt.pool_size) * wt.prob);
    loss += w * backward_accumulate(state.params, wt.triple, w / n, grad);
  }
  state.last_loss = loss / n;
  apply_update(state, grad, cfg);
  state.step += 1;
}

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

ordered_json metrics_row(const MetricsRecord& r) {
  ordered_json j;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["grad_norm_preclip"] = r.grad_norm_preclip;
  j["sampler"] = r.sampler;
  j["index_version"] = r.index_version;
  j["wall_ms"] = r.wall_ms;
  if (!r.inferencer_error.empty()) j["inferencer_error"] = r.inferencer_error;
  return j;
}

ordered_json triple_row(const TripleRecord& r) {
  ordered_json j;
  j["qid"] = r.qid;
  j["pos"] = r.pos;
  j["neg"] = r.neg;
  j["sampler"] = r.sampler;
  j["index_version"] = r.index_version;
  return j;
}

// Hand-off state between the trainer and the inferencer: a latest-wins
// checkpoint mailbox one way, a published index slot the other way.
struct RefreshShared {
  std::mutex mu;
  std::condition_variable cv_mailbox;
  std::optional<Checkpoint> mailbox;
  bool closed = false;

  std::condition_variable cv_published;
  std::shared_ptr<const DenseIndex> published;
  std::int64_t published_version = -1;
  std::string error;
  std::int64_t error_version = -1;
};

void inferencer_main(RefreshShared& sh, const Corpus& corpus,
                     const std::vector<std::int64_t>& inject) {
  for (;;) {
    Checkpoint ck;
    {
      std::unique_lock lk(sh.mu);
      sh.cv_mailbox.wait(lk, [&] { return sh.mailbox.has_value() || sh.closed; });
      if (!sh.mailbox.has_value()) return;
      ck = std::move(*sh.mailbox);
      sh.mailbox.reset();
    }
    try {
      if (std::find(inject.begin(), inject.end(), ck.step) != inject.end())
        throw NumericError("injected inferencer failure at step " + std::to_string(ck.step));
      auto idx = std::make_shared<DenseIndex>(encode_corpus(ck.params, corpus, ck.step));
      std::lock_guard lk(sh.mu);
      sh.published = std::move(idx);
      sh.published_version = ck.step;
      sh.cv_published.notify_all();
    } catch (const std::exception& e) {
      std::lock_guard lk(sh.mu);
      sh.error = e.what();
      sh.error_version = ck.step;
      sh.cv_published.notify_all();
    }
  }
}

struct FeatureCache {
  FeaturizeOptions opt;
  const Corpus& corpus;
  const std::vector<Query>& queries;
  std::vector<std::optional<FeatureVector>> doc_fv;
  std::vector<std::optional<FeatureVector>> query_fv;

  FeatureCache(FeaturizeOptions o, const Corpus& c, const std::vector<Query>& q)
      : opt(o), corpus(c), queries(q), doc_fv(c.size()), query_fv(q.size()) {}

  const FeatureVector& doc(std::size_t row) {
    if (!doc_fv[row]) doc_fv[row] = featurize(corpus.docs[row].text, opt);
    return *doc_fv[row];
  }
  const FeatureVector& query(std::size_t qi) {
    if (!query_fv[qi]) query_fv[qi] = featurize(queries[qi].text, opt);
    return *query_fv[qi];
  }
};

}  // namespace

void write_metrics_jsonl(const std::vector<MetricsRecord>& metrics, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path);
  for (const auto& r : metrics) os << metrics_row(r).dump() << "\n";
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open file: " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed metrics line");
    MetricsRecord r;
    try {
      r.step = j.at("step").get<std::int64_t>();
      r.loss = j.at("loss").get<double>();
      r.grad_norm_preclip = j.at("grad_norm_preclip").get<double>();
      r.sampler = j.at("sampler").get<std::string>();
      r.index_version = j.at("index_version").get<std::int64_t>();
      r.wall_ms = j.at("wall_ms").get<double>();
      if (j.contains("inferencer_error")) r.inferencer_error = j["inferencer_error"];
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_triples_jsonl(const std::vector<TripleRecord>& triples, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open file for writing: " + path);
  for (const auto& r : triples) os << triple_row(r).dump() << "\n";
}

TrainResult run_training(const TrainConfig& cfg, const Corpus& corpus,
                         const std::vector<Query>& queries, const Judgments& judgments,
                         const std::string& out_dir, const Checkpoint* resume) {
  validate_config(cfg);

  // Queries with at least one relevant doc present in the corpus.
  std::vector<std::size_t> trainable;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    for (const auto& did : judgments.relevant_docs(queries[qi].id))
      if (corpus.contains(did)) {
        trainable.push_back(qi);
        break;
      }
  }
  if (trainable.empty()) throw DataError("no query has a relevant doc in the corpus");
  std::size_t bpe = trainable.size() / static_cast<std::size_t>(cfg.batch_size);
  if (bpe == 0)
    throw ConfigError("batch_size exceeds the number of trainable queries");

  std::int64_t total = cfg.max_steps > 0
                           ? cfg.max_steps
                           : static_cast<std::int64_t>(bpe) * cfg.epochs;

  TrainState state;
  if (resume) {
    state.params = resume->params;
    state.step = resume->step;
    if (state.step > total) throw ConfigError("resume step is beyond max_steps");
  } else {
    state.params = init_params(cfg.feature_dim, cfg.embed_dim, cfg.seed, cfg.use_layernorm,
                               cfg.sim, cfg.use_bigrams);
  }
  // Trainer params always match the float32 lattice at emission points, so a
  // resumed run and a continuing run are bit-identical.
  state.params.round_to_f32();

  const bool warmup_on = cfg.warmup == WarmupKind::kBm25 && cfg.warmup_steps > 0;
  auto in_warmup = [&](std::int64_t t) { return warmup_on && t <= cfg.warmup_steps; };
  SamplerConfig warm_sampler;
  warm_sampler.kind = SamplerKind::kBm25Top;
  warm_sampler.pool_k = 100;
  warm_sampler.per_pos = cfg.sampler.per_pos;
  warm_sampler.seed = cfg.sampler.seed;

  const bool ance_run =
      cfg.sampler.kind == SamplerKind::kAnce && (!warmup_on || total > cfg.warmup_steps);

  std::optional<InvertedIndex> sparse;
  if (warmup_on || cfg.sampler.kind == SamplerKind::kBm25Top ||
      cfg.sampler.kind == SamplerKind::kBm25PlusRand)
    sparse = build_inverted_index(corpus);

  FeatureCache cache(
      FeaturizeOptions{static_cast<std::uint32_t>(state.params.feature_dim()),
                       state.params.use_bigrams},
      corpus, queries);

  TrainResult result;
  std::ofstream metrics_os, triples_os;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    metrics_os.open(out_dir + "/metrics.jsonl", std::ios::trunc);
    triples_os.open(out_dir + "/triples.jsonl", std::ios::trunc);
    if (!metrics_os || !triples_os)
      throw DataError("cannot open output files under " + out_dir);
  }

  RefreshShared shared;
  std::thread inferencer;
  bool inferencer_running = false;

  Checkpoint last_good{state.step, state.params};
  last_good.params.round_to_f32();

  auto emit_checkpoint = [&]() -> const Checkpoint& {
    state.params.round_to_f32();
    result.checkpoints.push_back(Checkpoint{state.step, state.params});
    const Checkpoint& ck = result.checkpoints.back();
    last_good = ck;
    if (!out_dir.empty()) {
      std::string path = out_dir + "/checkpoint_" + std::to_string(ck.step) + ".ance";
      save_checkpoint(ck.params, path);
      fs::copy_file(path, out_dir + "/checkpoint_last.ance",
                    fs::copy_options::overwrite_existing);
    }
    return ck;
  };

  auto finish = [&]() {
    if (inferencer_running) {
      {
        std::lock_guard lk(shared.mu);
        shared.closed = true;
      }
      shared.cv_mailbox.notify_one();
      inferencer.join();
      inferencer_running = false;
    }
  };

  bool index_ready = false;
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;

  try {
    GradientBuffer batch_grad = GradientBuffer::zeros_like(state.params);
    GradientBuffer accum_grad = GradientBuffer::zeros_like(state.params);
    const std::int64_t start_step = state.step;

    for (std::int64_t t = start_step + 1; t <= total; ++t) {
      auto t0 = std::chrono::steady_clock::now();
      bool warm = in_warmup(t);
      const SamplerConfig& eff = warm ? warm_sampler : cfg.sampler;

      if (!warm && cfg.sampler.kind == SamplerKind::kAnce && !index_ready) {
        // First ANCE batch: build the initial index from current params,
        // synchronously, and start the refresh role.
        const Checkpoint& ck = emit_checkpoint();
        auto idx = std::make_shared<DenseIndex>(encode_corpus(ck.params, corpus, ck.step));
        {
          std::lock_guard lk(shared.mu);
          shared.published = std::move(idx);
          shared.published_version = ck.step;
        }
        state.index_version = ck.step;
        index_ready = true;
        if (ance_run && cfg.refresh_enabled && !inferencer_running) {
          inferencer = std::thread(inferencer_main, std::ref(shared), std::cref(corpus),
                                   std::cref(cfg.inject_inferencer_failures));
          inferencer_running = true;
        }
      }

      std::int64_t epoch = (t - 1) / static_cast<std::int64_t>(bpe);
      std::int64_t bidx = (t - 1) % static_cast<std::int64_t>(bpe);
      if (epoch != order_epoch) {
        order = trainable;
        Rng erng(mix_seed(cfg.seed, 0xe9, static_cast<std::uint64_t>(epoch)));
        erng.shuffle(order);
        order_epoch = epoch;
      }

      Batch batch;
      std::vector<std::size_t> batch_qi;
      for (int i = 0; i < cfg.batch_size; ++i) {
        std::size_t qi = order[static_cast<std::size_t>(bidx) *
                                   static_cast<std::size_t>(cfg.batch_size) +
                               static_cast<std::size_t>(i)];
        const Query& q = queries[qi];
        std::vector<std::string> rels;
        for (const auto& did : judgments.relevant_docs(q.id))
          if (corpus.contains(did)) rels.push_back(did);
        Rng prng(mix_seed(cfg.seed, static_cast<std::uint64_t>(t),
                          static_cast<std::uint64_t>(i), 0x905));
        batch.items.push_back(BatchItem{q.id, q.text, rels[prng.below(rels.size())]});
        batch_qi.push_back(qi);
      }

      SamplerContext ctx;
      ctx.corpus = &corpus;
      ctx.judgments = &judgments;
      ctx.params = &state.params;
      ctx.sparse = sparse ? &*sparse : nullptr;
      std::int64_t used_version = -1;
      if (!warm && cfg.sampler.kind == SamplerKind::kAnce) {
        std::lock_guard lk(shared.mu);
        ctx.dense = shared.published;
        used_version = shared.published_version;
      }

      auto negs = sample_negatives(batch, eff, ctx, static_cast<std::uint64_t>(t));

      batch_grad.set_zero();
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < batch.items.size(); ++i) {
        TrainTriple triple;
        triple.query = cache.query(batch_qi[i]);
        triple.positive = cache.doc(corpus.index_of.at(batch.items[i].positive));
        for (const auto& n : negs[i]) {
          triple.negatives.push_back(cache.doc(corpus.index_of.at(n.doc_id)));
          triple.neg_weights.push_back(1.0 /
                                       (static_cast<double>(n.pool_size) * n.prob));
          TripleRecord tr;
          tr.qid = batch.items[i].query_id;
          tr.pos = batch.items[i].positive;
          tr.neg = n.doc_id;
          tr.sampler = to_string(eff.kind);
          tr.index_version = n.index_version;
          result.triples.push_back(tr);
          if (triples_os.is_open()) triples_os << triple_row(tr).dump() << "\n";
        }
        batch_loss += backward_accumulate(state.params, triple,
                                          1.0 / static_cast<double>(cfg.batch_size),
                                          batch_grad);
      }
      batch_loss /= static_cast<double>(cfg.batch_size);
      double batch_norm = batch_grad.norm();

      if (!std::isfinite(batch_loss) || std::abs(batch_loss) > cfg.divergence_threshold ||
          !std::isfinite(batch_norm)) {
        if (!out_dir.empty())
          save_checkpoint(last_good.params, out_dir + "/checkpoint_last.ance");
        throw TrainingDiverged("training diverged at step " + std::to_string(t), last_good);
      }

      // Windows align to absolute step numbers, so a resumed run closes the
      // same windows as the run it came from.
      accum_grad.add_scaled(batch_grad, 1.0 / static_cast<double>(cfg.grad_accum));
      if (t % cfg.grad_accum == 0) {
        apply_update(state, accum_grad, cfg);
        accum_grad.set_zero();
      }
      state.step = t;

      MetricsRecord rec;
      rec.step = t;
      rec.loss = batch_loss;
      rec.grad_norm_preclip = batch_norm;
      rec.sampler = to_string(eff.kind);
      rec.index_version = used_version;
      state.index_version = used_version;
      {
        std::lock_guard lk(shared.mu);
        if (!shared.error.empty()) {
          rec.inferencer_error = std::move(shared.error);
          shared.error.clear();
        }
      }

      if (t % cfg.refresh_interval == 0) {
        const Checkpoint& ck = emit_checkpoint();
        if (!warm && cfg.sampler.kind == SamplerKind::kAnce && cfg.refresh_enabled &&
            inferencer_running) {
          std::unique_lock lk(shared.mu);
          shared.mailbox = ck;
          shared.cv_mailbox.notify_one();
          if (cfg.synchronous)
            shared.cv_published.wait(lk, [&] {
              return shared.published_version >= t || shared.error_version >= t;
            });
        }
      }

      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      result.metrics.push_back(rec);
      if (metrics_os.is_open()) metrics_os << metrics_row(rec).dump() << "\n";
    }

    if (result.checkpoints.empty() || result.checkpoints.back().step != state.step)
      emit_checkpoint();
    finish();
  } catch (...) {
    if (metrics_os.is_open()) metrics_os.flush();
    finish();
    throw;
  }

  result.final = result.checkpoints.back();
  if (!out_dir.empty()) {
    save_checkpoint(result.final.params, out_dir + "/checkpoint_final.ance");
  }
  return result;
}

}  // namespace ance
