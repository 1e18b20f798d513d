#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ancelab/dense_index.hpp"
#include "ancelab/encoder.hpp"
#include "ancelab/negatives.hpp"
#include "ancelab/training.hpp"
#include "ancelab/types.hpp"

namespace ance {

struct OverlapResult {
  double fraction = 0.0;
  bool truncated = false;  // a list was shorter than k
};

// |top-k(a) ∩ top-k(b)| / k. Lists shorter than k are compared over the
// shorter prefix and flagged.
OverlapResult overlap_at_k(const std::vector<std::string>& a,
                           const std::vector<std::string>& b, int k);

struct ScoreDistribution {
  std::vector<double> quantile_values;  // one per requested quantile
  double max = 0.0;
  double min = 0.0;
  // Fraction of corpus scores within the top tenth of the score range,
  // i.e. ≥ max - 0.1 * (max - min).
  double top_band_fraction = 0.0;
};

// Exact scores of every indexed document for one query.
ScoreDistribution score_distribution(const EncoderParams& params, const DenseIndex& index,
                                     const std::string& query_text,
                                     const std::vector<double>& quantiles);

// b * d_star / corpus_size^2: the chance an in-batch slot holds an
// informative negative.
double inbatch_probability(std::int64_t b, std::int64_t d_star, std::int64_t corpus_size);

// p_i = g_i / sum_j g_j over per-instance gradient norms.
std::vector<double> oracle_distribution(const std::vector<double>& grad_norms);

struct VarianceReport {
  double trace = 0.0;          // Tr of the covariance of the weighted estimator
  Eigen::VectorXd mean_grad;   // E[g], independent of the sampling distribution
};

// Covariance trace of g_i = (1 / (N p_i)) * raw_i when negative i is drawn
// with probability p_i, plus the estimator mean for unbiasedness checks.
VarianceReport estimator_variance(const std::vector<double>& probs,
                                  const std::vector<Eigen::VectorXd>& raw_grads);

struct GainReport {
  double decomposed = 0.0;  // 2 lr E[g]^T (t - t*) - lr^2 |E[g]|^2 - lr^2 Tr(V)
  double direct = 0.0;      // |t - t*|^2 - E |t+1 - t*|^2 by enumeration
};

// One-step expected reduction of the squared distance to theta_star under the
// weighted single-draw estimator, both via the variance decomposition and by
// direct enumeration.
GainReport convergence_gain(const Eigen::VectorXd& theta_t, const Eigen::VectorXd& theta_star,
                            const std::vector<double>& probs,
                            const std::vector<Eigen::VectorXd>& raw_grads, double lr);

struct OverlapReport {
  std::vector<std::string> query_ids;  // queries with a non-empty pool
  std::vector<double> per_query;       // pool fraction inside the model's top-k
  double mean = 0.0;
  std::string sampler;
  int k = 0;
};

// For each query: what fraction of the sampler's candidate pool lies in the
// current model's exact top-k (relevant docs excluded from the top-k side as
// well). Queries whose pool is empty are skipped.
OverlapReport negative_overlap_diagnostic(const SamplerConfig& cfg, const SamplerContext& ctx,
                                          const std::vector<Query>& queries, int k = 100,
                                          int batch_size = 8);

struct AsyncGapReport {
  std::vector<std::int64_t> steps;
  std::vector<std::int64_t> gaps;  // step - index_version, aligned with steps
  double mean_gap = 0.0;
  std::int64_t max_gap = 0;
};

// Gap between the trainer step and the index version it consumed, over the
// ANN-sampler steps of a metrics stream.
AsyncGapReport async_gap_report(const std::vector<MetricsRecord>& metrics);

struct LossBoundReport {
  bool ok = true;
  std::vector<std::int64_t> violations;  // steps with tiny loss but large grad
  double median_norm = 0.0;
};

// Near-zero loss must come with a near-zero gradient: every step with
// loss < loss_eps must have grad norm < factor * median grad norm of the run.
LossBoundReport lossbound_check(const std::vector<MetricsRecord>& metrics,
                                double loss_eps = 1e-6, double factor = 1e-3);

// Per-negative full-gradient norms for one (query, positive) pair, each
// negative taken alone.
std::vector<double> grad_norms_for_negatives(const EncoderParams& params,
                                             const FeatureVector& query,
                                             const FeatureVector& positive,
                                             const std::vector<FeatureVector>& negatives);

}  // namespace ance
