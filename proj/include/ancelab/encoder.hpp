#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ancelab/types.hpp"

namespace ance {

enum class SimKind { kDot, kCosine };

std::string to_string(SimKind s);
SimKind sim_kind_from_string(const std::string& s);

// Shared query/doc tower: e = maybe_layernorm(W^T x). All math in double;
// float32 appears only in checkpoints and serialized indexes.
struct EncoderParams {
  RowMatrixXd W;              // feature_dim x embed_dim projection
  Eigen::VectorXd ln_gain;    // embed_dim
  Eigen::VectorXd ln_bias;    // embed_dim
  bool use_layernorm = true;
  SimKind sim = SimKind::kDot;
  bool use_bigrams = false;   // input featurization travels with the encoder

  Eigen::Index feature_dim() const { return W.rows(); }
  Eigen::Index embed_dim() const { return W.cols(); }
  // Count of trainable scalars: W plus, with layernorm on, gain and bias.
  Eigen::Index num_trainable() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
  // Rounds every parameter through float32, matching what a checkpoint
  // save/load round trip produces.
  void round_to_f32();
};

// W uniform in [-1/sqrt(feature_dim), +1/sqrt(feature_dim)], gain 1, bias 0.
EncoderParams init_params(Eigen::Index feature_dim, Eigen::Index embed_dim, std::uint64_t seed,
                          bool use_layernorm = true, SimKind sim = SimKind::kDot,
                          bool use_bigrams = false);

constexpr double kLayerNormEps = 1e-5;

Embedding encode(const EncoderParams& p, const FeatureVector& x);

// Similarity of two embeddings under the given kind. Cosine of a zero-norm
// vector is 0.
double score(const Embedding& q, const Embedding& d, SimKind sim);

// -log(exp(s_pos) / (exp(s_pos) + sum_j exp(s_neg_j))), stabilized by max
// subtraction.
double nll_loss(double s_pos, const std::vector<double>& s_neg);

struct TrainTriple {
  FeatureVector query;
  FeatureVector positive;
  std::vector<FeatureVector> negatives;
  std::vector<double> neg_weights;  // empty means all 1
};

// Parameter-shaped gradient accumulator.
struct GradientBuffer {
  RowMatrixXd W;
  Eigen::VectorXd ln_gain;
  Eigen::VectorXd ln_bias;

  static GradientBuffer zeros_like(const EncoderParams& p);
  void set_zero();
  void add_scaled(const GradientBuffer& other, double c);
  void scale(double c);
  double squared_norm() const;
  double norm() const;
  Eigen::VectorXd flatten(const EncoderParams& p) const;
};

struct BackwardResult {
  double loss = 0.0;
  GradientBuffer grads;
};

// Loss sum_j w_j * softplus(s_neg_j - s_pos) with gradients through both
// towers of the shared encoder. With one unit-weight negative this equals
// nll_loss on the same scores.
double triple_loss(const EncoderParams& p, const TrainTriple& t);
BackwardResult backward(const EncoderParams& p, const TrainTriple& t);
// Adds scale * grads into acc without allocating; returns the loss.
double backward_accumulate(const EncoderParams& p, const TrainTriple& t, double scale,
                           GradientBuffer& acc);

// L2 norm of the full parameter gradient of one (query, positive, negative)
// triple at unit weight; equals |backward(triple).grads| exactly.
double per_sample_grad_norm(const EncoderParams& p, const FeatureVector& query,
                            const FeatureVector& positive, const FeatureVector& negative);

// Max relative error between analytic gradient and central differences over
// up to max_coords seeded coordinates of the flattened parameters.
double finite_diff_check(const EncoderParams& p, const TrainTriple& t, double step,
                         std::uint64_t seed = 0xfd, int max_coords = 200);

// Checkpoint: magic "ANCE", format version, dims, flags, then row-major
// float32 W, ln_gain, ln_bias. Step is tracked by filename, not in the file.
void save_checkpoint(const EncoderParams& p, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);

}  // namespace ance
