#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ancelab/encoder.hpp"
#include "ancelab/negatives.hpp"
#include "ancelab/types.hpp"

namespace ance {

enum class OptimizerKind { kSgd, kAdam };
enum class WarmupKind { kNone, kBm25 };

struct TrainConfig {
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int batch_size = 8;
  int grad_accum = 2;
  double clip_norm = 1.0;
  int refresh_interval = 500;  // batches between checkpoint emissions/refreshes
  WarmupKind warmup = WarmupKind::kNone;
  int warmup_steps = 0;
  int max_steps = 0;  // total batches; when 0, epochs * batches_per_epoch
  int epochs = 0;
  std::uint64_t seed = 42;
  SamplerConfig sampler;

  // Encoder shape for fresh runs (ignored on resume).
  int feature_dim = 65536;
  int embed_dim = 64;
  bool use_layernorm = true;
  SimKind sim = SimKind::kDot;
  bool use_bigrams = false;

  bool synchronous = false;     // trainer blocks at refresh boundaries
  bool refresh_enabled = true;  // false: ANCE keeps sampling from the initial index
  double divergence_threshold = 1e6;

  // Test hook: the inferencer fails on checkpoints with these steps.
  std::vector<std::int64_t> inject_inferencer_failures;
};

struct Checkpoint {
  std::int64_t step = 0;
  EncoderParams params;
};

struct AdamMoments {
  RowMatrixXd m_w, v_w;
  Eigen::VectorXd m_gain, v_gain, m_bias, v_bias;
  std::int64_t t = 0;
};

struct TrainState {
  EncoderParams params;
  AdamMoments adam;
  std::int64_t step = 0;
  std::int64_t index_version = -1;      // version currently in use, -1 = none
  double last_preclip_norm = 0.0;       // recorded by the latest update
  double last_loss = 0.0;
};

struct WeightedTriple {
  TrainTriple triple;
  double prob = 1.0;  // sampling probability of the (single) negative
  int pool_size = 1;  // candidate-pool size N
};

// Averages per-triple gradients weighted by 1 / (pool_size * prob), clips the
// global norm at clip_norm (pre-clip norm recorded on the state), and applies
// one optimizer update.
void weighted_step(TrainState& state, const std::vector<WeightedTriple>& triples,
                   const TrainConfig& cfg);

// Clip + optimizer update on an already-averaged gradient; grad is clipped in
// place. Shared by weighted_step and the training loop.
void apply_update(TrainState& state, GradientBuffer& grad, const TrainConfig& cfg);

struct MetricsRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm_preclip = 0.0;
  std::string sampler;
  std::int64_t index_version = -1;
  double wall_ms = 0.0;
  std::string inferencer_error;  // empty unless a refresh failed
};

struct TripleRecord {
  std::string qid;
  std::string pos;
  std::string neg;
  std::string sampler;
  std::int64_t index_version = -1;
};

struct TrainResult {
  Checkpoint final;
  std::vector<MetricsRecord> metrics;
  std::vector<TripleRecord> triples;
  std::vector<Checkpoint> checkpoints;  // every emission, including final
};

// Divergence abort; carries the last good checkpoint.
struct TrainingDiverged : NumericError {
  TrainingDiverged(const std::string& msg, Checkpoint last)
      : NumericError(msg), last_good(std::move(last)) {}
  Checkpoint last_good;
};

// The full loop: optional BM25 warm-up, then the configured sampler; metrics
// every batch; checkpoint every refresh_interval batches and at the end,
// with trainer params rounded to float32 at each emission so resuming from a
// checkpoint is bit-identical to continuing. For the ANCE sampler this runs
// the trainer/inferencer refresh protocol (async, or blocking when
// cfg.synchronous). When out_dir is set, metrics/triples/checkpoints are
// streamed there as JSONL and checkpoint files. resume continues from a
// checkpoint's step with its params.
TrainResult run_training(const TrainConfig& cfg, const Corpus& corpus,
                         const std::vector<Query>& queries, const Judgments& judgments,
                         const std::string& out_dir = "", const Checkpoint* resume = nullptr);

void write_metrics_jsonl(const std::vector<MetricsRecord>& metrics, const std::string& path);
std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path);
void write_triples_jsonl(const std::vector<TripleRecord>& triples, const std::string& path);

}  // namespace ance
