#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "ancelab/corpus.hpp"
#include "ancelab/training.hpp"
#include "test_util.hpp"

using namespace ance;

namespace {

FeatureVector fv(std::uint32_t dim, std::vector<std::pair<std::uint32_t, double>> e) {
  FeatureVector v;
  v.dim = dim;
  v.entries = std::move(e);
  return v;
}

WeightedTriple wt(std::uint32_t dim, std::uint32_t q, std::uint32_t pos, std::uint32_t neg,
                  double prob = 1.0, int pool = 1) {
  WeightedTriple w;
  w.triple.query = fv(dim, {{q, 1.0}});
  w.triple.positive = fv(dim, {{pos, 1.0}});
  w.triple.negatives = {fv(dim, {{neg, 1.0}})};
  w.prob = prob;
  w.pool_size = pool;
  return w;
}

TrainState fresh_state(int df, int de, std::uint64_t seed, bool ln = false) {
  TrainState s;
  s.params = init_params(df, de, seed, ln);
  return s;
}

// Small synthetic retrieval task every training test shares.
struct Task {
  SyntheticData data;
  explicit Task(int docs = 24, int queries = 12, int topics = 6, double mu = 0.5,
                std::uint64_t seed = 31) {
    SyntheticSpec spec;
    spec.corpus_size = docs;
    spec.num_queries = queries;
    spec.num_topics = topics;
    spec.doc_len = 12;
    spec.query_len = 5;
    spec.mismatch_rate = mu;
    spec.seed = seed;
    data = generate_synthetic(spec);
  }
};

TrainConfig small_cfg() {
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.batch_size = 4;
  cfg.grad_accum = 1;
  cfg.clip_norm = 1.0;
  cfg.refresh_interval = 4;
  cfg.max_steps = 6;
  cfg.seed = 7;
  cfg.feature_dim = 2048;
  cfg.embed_dim = 8;
  cfg.use_layernorm = true;
  cfg.sampler.kind = SamplerKind::kRandInBatch;
  cfg.sampler.seed = 3;
  return cfg;
}

std::vector<std::int64_t> versions_of(const std::vector<MetricsRecord>& metrics) {
  std::vector<std::int64_t> v;
  for (const auto& m : metrics) v.push_back(m.index_version);
  return v;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("weighted_step with uniform probabilities is plain sgd on the mean gradient") {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.clip_norm = 0.0;  // no clipping

  std::vector<WeightedTriple> triples;
  triples.push_back(wt(16, 0, 1, 2, 1.0 / 3.0, 3));
  triples.push_back(wt(16, 3, 4, 5, 1.0 / 3.0, 3));

  auto s1 = fresh_state(16, 4, 9);
  weighted_step(s1, triples, cfg);

  // By hand: each weight 1/(N p) = 1, so the update is lr * mean gradient.
  auto s2 = fresh_state(16, 4, 9);
  GradientBuffer mean = GradientBuffer::zeros_like(s2.params);
  double loss = 0.0;
  for (const auto& t : triples)
    loss += backward_accumulate(s2.params, t.triple, 0.5, mean);
  s2.params.W -= cfg.lr * mean.W;

  CHECK((s1.params.W - s2.params.W).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(s1.step == 1);
  CHECK(s1.last_loss == doctest::Approx(loss / 2.0).epsilon(1e-12));
  CHECK(s1.last_preclip_norm == doctest::Approx(mean.norm()).epsilon(1e-12));
}

TEST_CASE("weighted_step importance weights scale per-triple gradients") {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.clip_norm = 0.0;

  // One triple at p twice the uniform value: weight 1/(N p) = 1/2.
  std::vector<WeightedTriple> half{wt(16, 0, 1, 2, 2.0 / 4.0, 4)};
  auto s1 = fresh_state(16, 4, 11);
  weighted_step(s1, half, cfg);

  auto s2 = fresh_state(16, 4, 11);
  auto res = backward(s2.params, half[0].triple);
  s2.params.W -= cfg.lr * 0.5 * res.grads.W;
  CHECK((s1.params.W - s2.params.W).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("weighted_step validates its inputs") {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  auto s = fresh_state(16, 4, 1);
  CHECK_THROWS_AS(weighted_step(s, {}, cfg), ConfigError);

  auto bad = wt(16, 0, 1, 2);
  bad.prob = 0.0;
  std::vector<WeightedTriple> v{bad};
  CHECK_THROWS_AS(weighted_step(s, v, cfg), ConfigError);

  bad.prob = 0.5;
  bad.pool_size = 0;
  v = {bad};
  CHECK_THROWS_AS(weighted_step(s, v, cfg), ConfigError);
}

TEST_CASE("apply_update clips the gradient norm and records the pre-clip value") {
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.clip_norm = 1.0;

  auto s = fresh_state(4, 4, 2);
  auto before = s.params.W;
  auto g = GradientBuffer::zeros_like(s.params);
  g.W(0, 0) = 6.0;
  g.W(1, 1) = 8.0;  // norm 10
  apply_update(s, g, cfg);
  CHECK(s.last_preclip_norm == doctest::Approx(10.0));
  CHECK(g.norm() == doctest::Approx(1.0).epsilon(1e-12));
  // Update uses the clipped gradient.
  CHECK(before(0, 0) - s.params.W(0, 0) == doctest::Approx(0.6).epsilon(1e-12));

  // Below the threshold nothing changes.
  auto s2 = fresh_state(4, 4, 2);
  auto g2 = GradientBuffer::zeros_like(s2.params);
  g2.W(0, 0) = 0.5;
  apply_update(s2, g2, cfg);
  CHECK(g2.W(0, 0) == doctest::Approx(0.5));
  CHECK(s2.last_preclip_norm == doctest::Approx(0.5));
}

TEST_CASE("apply_update rejects non-finite gradients") {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  auto s = fresh_state(4, 4, 2);
  auto g = GradientBuffer::zeros_like(s.params);
  g.W(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(apply_update(s, g, cfg), NumericError);
}

TEST_CASE("adam matches a from-scratch implementation over several steps") {
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.clip_norm = 0.0;

  auto s = fresh_state(6, 4, 3, true);
  // Mirror state for the naive loop.
  Eigen::VectorXd theta = s.params.flatten();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  Rng rng(17);
  for (int t = 1; t <= 5; ++t) {
    auto g = GradientBuffer::zeros_like(s.params);
    for (Eigen::Index r = 0; r < g.W.rows(); ++r)
      for (Eigen::Index c = 0; c < g.W.cols(); ++c) g.W(r, c) = rng.unit() - 0.5;
    for (Eigen::Index k = 0; k < g.ln_gain.size(); ++k) {
      g.ln_gain[k] = rng.unit() - 0.5;
      g.ln_bias[k] = rng.unit() - 0.5;
    }
    Eigen::VectorXd gflat = g.flatten(s.params);

    apply_update(s, g, cfg);

    m = b1 * m + (1 - b1) * gflat;
    v = (b2 * v.array() + (1 - b2) * gflat.array().square()).matrix();
    Eigen::VectorXd mhat = m / (1 - std::pow(b1, t));
    Eigen::VectorXd vhat = v / (1 - std::pow(b2, t));
    theta -= cfg.lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();

    CHECK((s.params.flatten() - theta).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("run_training with zero steps returns the quantized initial params") {
  Task task;
  auto cfg = small_cfg();
  cfg.max_steps = 0;
  cfg.epochs = 0;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  auto want = init_params(cfg.feature_dim, cfg.embed_dim, cfg.seed, cfg.use_layernorm,
                          cfg.sim, cfg.use_bigrams);
  want.round_to_f32();
  CHECK(res.final.step == 0);
  CHECK((res.final.params.W - want.W).cwiseAbs().maxCoeff() == 0.0);
  CHECK(res.metrics.empty());
  REQUIRE(res.checkpoints.size() == 1);
  CHECK(res.checkpoints[0].step == 0);
}

TEST_CASE("run_training validates config and data") {
  Task task;
  auto cfg = small_cfg();
  cfg.lr = 0.0;
  CHECK_THROWS_AS(run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments),
                  ConfigError);
  cfg = small_cfg();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments),
                  ConfigError);
  cfg = small_cfg();
  cfg.batch_size = 1000;  // larger than the trainable query count
  CHECK_THROWS_AS(run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments),
                  ConfigError);
  cfg = small_cfg();
  Judgments none;
  CHECK_THROWS_AS(run_training(cfg, task.data.corpus, task.data.queries, none), DataError);
}

TEST_CASE("epochs translate to batches_per_epoch * epochs steps") {
  Task task;  // 12 queries
  auto cfg = small_cfg();
  cfg.max_steps = 0;
  cfg.epochs = 2;  // 12 / 4 = 3 batches per epoch
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  CHECK(res.final.step == 6);
  CHECK(res.metrics.size() == 6);
  for (std::size_t i = 0; i < res.metrics.size(); ++i)
    CHECK(res.metrics[i].step == static_cast<std::int64_t>(i + 1));
}

TEST_CASE("warm-up switches to the main sampler exactly after warmup_steps") {
  Task task;
  auto cfg = small_cfg();
  cfg.warmup = WarmupKind::kBm25;
  cfg.warmup_steps = 3;
  cfg.max_steps = 6;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  REQUIRE(res.metrics.size() == 6);
  for (int i = 0; i < 3; ++i) CHECK(res.metrics[static_cast<std::size_t>(i)].sampler == "bm25");
  for (int i = 3; i < 6; ++i) CHECK(res.metrics[static_cast<std::size_t>(i)].sampler == "rand");
  // Triples carry the same tags.
  for (const auto& t : res.triples) {
    CHECK((t.sampler == "bm25" || t.sampler == "rand"));
    CHECK(t.index_version == -1);
  }
}

TEST_CASE("a run that is all warm-up equals a pure bm25 run bit for bit") {
  Task task;
  auto cfg = small_cfg();
  cfg.warmup = WarmupKind::kBm25;
  cfg.warmup_steps = 6;
  cfg.max_steps = 6;
  auto warm = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);

  auto pure = small_cfg();
  pure.sampler.kind = SamplerKind::kBm25Top;
  pure.sampler.pool_k = 100;
  pure.max_steps = 6;
  auto ref = run_training(pure, task.data.corpus, task.data.queries, task.data.judgments);

  CHECK((warm.final.params.flatten() - ref.final.params.flatten()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sync ance run records the staircase of index versions") {
  Task task;
  auto cfg = small_cfg();
  cfg.sampler.kind = SamplerKind::kAnce;
  cfg.sampler.pool_k = 8;
  cfg.refresh_interval = 2;
  cfg.max_steps = 6;
  cfg.synchronous = true;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  CHECK(versions_of(res.metrics) == std::vector<std::int64_t>{0, 0, 2, 2, 4, 4});
  for (const auto& t : res.triples) CHECK(t.index_version >= 0);
  for (const auto& m : res.metrics) CHECK(m.sampler == "ance");
}

TEST_CASE("refresh_enabled=false pins the initial index for the whole run") {
  Task task;
  auto cfg = small_cfg();
  cfg.sampler.kind = SamplerKind::kAnce;
  cfg.sampler.pool_k = 8;
  cfg.refresh_interval = 2;
  cfg.max_steps = 6;
  cfg.synchronous = true;
  cfg.refresh_enabled = false;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  CHECK(versions_of(res.metrics) == std::vector<std::int64_t>{0, 0, 0, 0, 0, 0});
}

TEST_CASE("warm-up then ance publishes the first index at the handoff step") {
  Task task;
  auto cfg = small_cfg();
  cfg.sampler.kind = SamplerKind::kAnce;
  cfg.sampler.pool_k = 8;
  cfg.warmup = WarmupKind::kBm25;
  cfg.warmup_steps = 2;
  cfg.refresh_interval = 3;
  cfg.max_steps = 6;
  cfg.synchronous = true;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  auto v = versions_of(res.metrics);
  REQUIRE(v.size() == 6);
  CHECK(v[0] == -1);  // warm-up: no index yet
  CHECK(v[1] == -1);
  CHECK(v[2] == 2);  // first ance batch samples from the handoff snapshot
  CHECK(v[3] == 3);  // refresh at step 3 published before step 4 sampled
  CHECK(v[4] == 3);
  CHECK(v[5] == 3);
}

TEST_CASE("injected inferencer failure keeps the stale index and surfaces the error") {
  Task task;
  auto cfg = small_cfg();
  cfg.sampler.kind = SamplerKind::kAnce;
  cfg.sampler.pool_k = 8;
  cfg.refresh_interval = 2;
  cfg.max_steps = 6;
  cfg.synchronous = true;
  cfg.inject_inferencer_failures = {2};
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  CHECK(versions_of(res.metrics) == std::vector<std::int64_t>{0, 0, 0, 0, 4, 4});
  bool surfaced = false;
  for (const auto& m : res.metrics)
    if (!m.inferencer_error.empty()) surfaced = true;
  CHECK(surfaced);
}

TEST_CASE("divergence aborts with the last good checkpoint attached") {
  Task task;
  TempDir tmp("diverge");
  auto cfg = small_cfg();
  cfg.divergence_threshold = 1e-12;  // any finite loss trips it
  cfg.max_steps = 4;
  try {
    run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments, tmp.path);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.last_good.step == 0);
    CHECK(std::string(e.what()).find("diverg") != std::string::npos);
  }
  CHECK(std::filesystem::exists(tmp.file("checkpoint_last.ance")));
}

TEST_CASE("sgd resume from a checkpoint matches the uninterrupted run bitwise") {
  Task task;
  auto cfg = small_cfg();
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.grad_accum = 1;
  cfg.refresh_interval = 4;
  cfg.max_steps = 8;
  auto full = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);

  auto cfg_half = cfg;
  cfg_half.max_steps = 4;
  auto half = run_training(cfg_half, task.data.corpus, task.data.queries, task.data.judgments);
  CHECK(half.final.step == 4);

  Checkpoint resume = half.final;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments,
                          "", &resume);
  CHECK(res.final.step == 8);
  CHECK((res.final.params.flatten() - full.final.params.flatten()).cwiseAbs().maxCoeff() == 0.0);
  // Metrics cover only the resumed half.
  REQUIRE(res.metrics.size() == 4);
  CHECK(res.metrics.front().step == 5);

  // Resuming past the end is a config error.
  Checkpoint beyond = full.final;
  auto cfg_short = cfg;
  cfg_short.max_steps = 4;
  CHECK_THROWS_AS(run_training(cfg_short, task.data.corpus, task.data.queries,
                               task.data.judgments, "", &beyond),
                  ConfigError);
}

TEST_CASE("resume honors gradient accumulation window alignment") {
  Task task;
  auto cfg = small_cfg();
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.grad_accum = 2;
  cfg.refresh_interval = 4;  // emission points are window-aligned
  cfg.max_steps = 8;
  auto full = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);

  auto cfg_half = cfg;
  cfg_half.max_steps = 4;
  auto half = run_training(cfg_half, task.data.corpus, task.data.queries, task.data.judgments);
  Checkpoint resume = half.final;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments,
                          "", &resume);
  CHECK((res.final.params.flatten() - full.final.params.flatten()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training on an easy task reduces the loss") {
  Task task(32, 16, 8, 0.0, 5);
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.batch_size = 4;
  cfg.grad_accum = 1;
  cfg.clip_norm = 1.0;
  cfg.refresh_interval = 50;
  cfg.max_steps = 120;
  cfg.seed = 9;
  cfg.feature_dim = 2048;
  cfg.embed_dim = 8;
  cfg.sampler.kind = SamplerKind::kRandInBatch;
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments);
  REQUIRE(res.metrics.size() == 120);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 12; ++i) {
    first += res.metrics[static_cast<std::size_t>(i)].loss;
    last += res.metrics[res.metrics.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  CHECK(last < first);
}

TEST_CASE("checkpoints are emitted at refresh boundaries and the end") {
  Task task;
  auto cfg = small_cfg();
  cfg.refresh_interval = 4;
  cfg.max_steps = 10;
  TempDir tmp("ckpt_sched");
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments,
                          tmp.path);
  std::vector<std::int64_t> steps;
  for (const auto& c : res.checkpoints) steps.push_back(c.step);
  CHECK(steps == std::vector<std::int64_t>{4, 8, 10});
  CHECK(res.final.step == 10);
  CHECK(std::filesystem::exists(tmp.file("checkpoint_4.ance")));
  CHECK(std::filesystem::exists(tmp.file("checkpoint_8.ance")));
  CHECK(std::filesystem::exists(tmp.file("checkpoint_10.ance")));
  CHECK(std::filesystem::exists(tmp.file("checkpoint_last.ance")));
  CHECK(std::filesystem::exists(tmp.file("checkpoint_final.ance")));
  CHECK(std::filesystem::exists(tmp.file("metrics.jsonl")));
  CHECK(std::filesystem::exists(tmp.file("triples.jsonl")));

  // The emitted params are float32 images.
  auto q = res.checkpoints[0].params;
  q.round_to_f32();
  CHECK((q.W - res.checkpoints[0].params.W).cwiseAbs().maxCoeff() == 0.0);

  // checkpoint_final matches the in-memory final.
  auto final_file = load_checkpoint(tmp.file("checkpoint_final.ance"));
  CHECK((final_file.W - res.final.params.W).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("metrics jsonl round trips, including the error field") {
  TempDir tmp("metrics_rt");
  std::vector<MetricsRecord> rows(2);
  rows[0].step = 1;
  rows[0].loss = 0.5;
  rows[0].grad_norm_preclip = 1.25;
  rows[0].sampler = "rand";
  rows[0].index_version = -1;
  rows[0].wall_ms = 3.5;
  rows[1].step = 2;
  rows[1].loss = 0.25;
  rows[1].grad_norm_preclip = 0.75;
  rows[1].sampler = "ance";
  rows[1].index_version = 40;
  rows[1].wall_ms = 4.0;
  rows[1].inferencer_error = "injected inferencer failure at step 40";

  write_metrics_jsonl(rows, tmp.file("m.jsonl"));
  auto back = read_metrics_jsonl(tmp.file("m.jsonl"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].step == 1);
  CHECK(back[0].loss == doctest::Approx(0.5));
  CHECK(back[0].sampler == "rand");
  CHECK(back[0].inferencer_error.empty());
  CHECK(back[1].index_version == 40);
  CHECK(back[1].inferencer_error == rows[1].inferencer_error);

  CHECK_THROWS_AS(read_metrics_jsonl(tmp.file("missing.jsonl")), DataError);
}

TEST_CASE("streamed metrics equal the in-memory records") {
  Task task;
  auto cfg = small_cfg();
  cfg.max_steps = 5;
  TempDir tmp("stream");
  auto res = run_training(cfg, task.data.corpus, task.data.queries, task.data.judgments,
                          tmp.path);
  auto streamed = read_metrics_jsonl(tmp.file("metrics.jsonl"));
  REQUIRE(streamed.size() == res.metrics.size());
  for (std::size_t i = 0; i < streamed.size(); ++i) {
    CHECK(streamed[i].step == res.metrics[i].step);
    CHECK(streamed[i].loss == doctest::Approx(res.metrics[i].loss).epsilon(1e-12));
    CHECK(streamed[i].sampler == res.metrics[i].sampler);
    CHECK(streamed[i].index_version == res.metrics[i].index_version);
  }
}

}  // TEST_SUITE
