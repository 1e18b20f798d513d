#include "ancelab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ancelab/corpus.hpp"

namespace ance {

OverlapResult overlap_at_k(const std::vector<std::string>& a,
                           const std::vector<std::string>& b, int k) {
  if (k < 1) throw ConfigError("overlap k must be at least 1");
  std::size_t eff = std::min({static_cast<std::size_t>(k), a.size(), b.size()});
  OverlapResult r;
  r.truncated = eff < static_cast<std::size_t>(k);
  if (eff == 0) return r;
  std::unordered_set<std::string> in_a(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(eff));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < eff; ++i)
    if (in_a.count(b[i])) ++hits;
  r.fraction = static_cast<double>(hits) / static_cast<double>(eff);
  return r;
}

ScoreDistribution score_distribution(const EncoderParams& params, const DenseIndex& index,
                                     const std::string& query_text,
                                     const std::vector<double>& quantiles) {
  if (index.size() == 0) throw DataError("score distribution over an empty index");
  for (double q : quantiles)
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantiles must lie in [0, 1]");

  FeaturizeOptions fo{static_cast<std::uint32_t>(params.feature_dim()), params.use_bigrams};
  Embedding qe = encode(params, featurize(query_text, fo));

  auto ranked = search_exact(index, qe, static_cast<int>(index.size()), params.sim);
  std::vector<double> scores(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) scores[i] = ranked[i].score;
  std::sort(scores.begin(), scores.end());

  ScoreDistribution dist;
  dist.min = scores.front();
  dist.max = scores.back();
  double n1 = static_cast<double>(scores.size() - 1);
  for (double q : quantiles) {
    double pos = q * n1;
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, scores.size() - 1);
    double frac = pos - static_cast<double>(lo);
    dist.quantile_values.push_back(scores[lo] + frac * (scores[hi] - scores[lo]));
  }
  double threshold = dist.max - 0.1 * (dist.max - dist.min);
  std::size_t band = 0;
  for (double s : scores)
    if (s >= threshold) ++band;
  dist.top_band_fraction = static_cast<double>(band) / static_cast<double>(scores.size());
  return dist;
}

double inbatch_probability(std::int64_t b, std::int64_t d_star, std::int64_t corpus_size) {
  if (b < 1 || d_star < 1 || corpus_size < 1)
    throw ConfigError("in-batch probability arguments must be at least 1");
  if (d_star > corpus_size)
    throw ConfigError("d_star cannot exceed the corpus size");
  return static_cast<double>(b) * static_cast<double>(d_star) /
         (static_cast<double>(corpus_size) * static_cast<double>(corpus_size));
}

std::vector<double> oracle_distribution(const std::vector<double>& grad_norms) {
  if (grad_norms.empty()) throw ConfigError("oracle distribution needs at least one norm");
  double sum = 0.0;
  for (double g : grad_norms) {
    if (g < 0.0) throw ConfigError("gradient norms must be non-negative");
    sum += g;
  }
  if (sum == 0.0) throw NumericError("oracle distribution undefined for all-zero gradient norms");
  std::vector<double> p(grad_norms.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = grad_norms[i] / sum;
  return p;
}

namespace {

void validate_distribution(const std::vector<double>& probs,
                           const std::vector<Eigen::VectorXd>& grads) {
  if (grads.empty()) throw ConfigError("estimator needs at least one gradient");
  if (probs.size() != grads.size())
    throw ConfigError("probs and gradients must have equal length");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p > 0.0)) throw ConfigError("probabilities must be positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("probabilities must sum to 1");
  for (const auto& g : grads)
    if (g.size() != grads.front().size())
      throw ConfigError("gradient dimension mismatch");
}

}  // namespace

VarianceReport estimator_variance(const std::vector<double>& probs,
                                  const std::vector<Eigen::VectorXd>& raw_grads) {
  validate_distribution(probs, raw_grads);
  const double n = static_cast<double>(raw_grads.size());
  VarianceReport rep;
  rep.mean_grad = Eigen::VectorXd::Zero(raw_grads.front().size());
  Eigen::VectorXd weighted_mean = Eigen::VectorXd::Zero(raw_grads.front().size());
  double second_moment = 0.0;
  for (std::size_t i = 0; i < raw_grads.size(); ++i) {
    Eigen::VectorXd gi = raw_grads[i] / (n * probs[i]);
    second_moment += probs[i] * gi.squaredNorm();
    weighted_mean += probs[i] * gi;
    rep.mean_grad += raw_grads[i] / n;
  }
  rep.trace = second_moment - weighted_mean.squaredNorm();
  return rep;
}

GainReport convergence_gain(const Eigen::VectorXd& theta_t, const Eigen::VectorXd& theta_star,
                            const std::vector<double>& probs,
                            const std::vector<Eigen::VectorXd>& raw_grads, double lr) {
  VarianceReport var = estimator_variance(probs, raw_grads);
  if (theta_t.size() != theta_star.size() || theta_t.size() != var.mean_grad.size())
    throw ConfigError("parameter dimension mismatch");
  Eigen::VectorXd d = theta_t - theta_star;

  GainReport rep;
  rep.decomposed = 2.0 * lr * var.mean_grad.dot(d) - lr * lr * var.mean_grad.squaredNorm() -
                   lr * lr * var.trace;
  const double n = static_cast<double>(raw_grads.size());
  double expected_next = 0.0;
  for (std::size_t i = 0; i < raw_grads.size(); ++i) {
    Eigen::VectorXd gi = raw_grads[i] / (n * probs[i]);
    expected_next += probs[i] * (d - lr * gi).squaredNorm();
  }
  rep.direct = d.squaredNorm() - expected_next;
  return rep;
}

OverlapReport negative_overlap_diagnostic(const SamplerConfig& cfg, const SamplerContext& ctx,
                                          const std::vector<Query>& queries, int k,
                                          int batch_size) {
  if (k < 1) throw ConfigError("overlap k must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!ctx.corpus || !ctx.judgments || !ctx.params || !ctx.dense)
    throw ConfigError("overlap diagnostic needs corpus, judgments, params, and a dense index");

  OverlapReport rep;
  rep.sampler = to_string(cfg.kind);
  rep.k = k;

  FeaturizeOptions fo{static_cast<std::uint32_t>(ctx.params->feature_dim()),
                      ctx.params->use_bigrams};

  for (std::size_t base = 0; base < queries.size();
       base += static_cast<std::size_t>(batch_size)) {
    Batch batch;
    std::size_t end = std::min(queries.size(), base + static_cast<std::size_t>(batch_size));
    for (std::size_t qi = base; qi < end; ++qi) {
      const Query& q = queries[qi];
      std::string pos;
      for (const auto& did : ctx.judgments->relevant_docs(q.id))
        if (ctx.corpus->contains(did)) {
          pos = did;
          break;
        }
      batch.items.push_back(BatchItem{q.id, q.text, pos});
    }

    for (std::size_t i = 0; i < batch.items.size(); ++i) {
      auto pool = candidate_pool(batch, i, cfg, ctx);
      if (pool.empty()) continue;

      const BatchItem& item = batch.items[i];
      auto rel = ctx.judgments->relevant_docs(item.query_id);
      std::unordered_set<std::string> relevant(rel.begin(), rel.end());
      Embedding qe = encode(*ctx.params, featurize(item.query_text, fo));
      auto ranked = search_exact(*ctx.dense, qe,
                                 std::min<int>(static_cast<int>(ctx.dense->size()),
                                               k + static_cast<int>(relevant.size())),
                                 ctx.params->sim);
      std::unordered_set<std::string> topk;
      for (const auto& sd : ranked) {
        if (relevant.count(sd.id)) continue;
        topk.insert(sd.id);
        if (topk.size() == static_cast<std::size_t>(k)) break;
      }

      std::size_t hits = 0;
      for (const auto& id : pool)
        if (topk.count(id)) ++hits;
      rep.query_ids.push_back(item.query_id);
      rep.per_query.push_back(static_cast<double>(hits) / static_cast<double>(pool.size()));
    }
  }

  if (!rep.per_query.empty()) {
    double sum = 0.0;
    for (double f : rep.per_query) sum += f;
    rep.mean = sum / static_cast<double>(rep.per_query.size());
  }
  return rep;
}

AsyncGapReport async_gap_report(const std::vector<MetricsRecord>& metrics) {
  AsyncGapReport rep;
  for (const auto& m : metrics) {
    if (m.sampler != to_string(SamplerKind::kAnce) || m.index_version < 0) continue;
    rep.steps.push_back(m.step);
    rep.gaps.push_back(m.step - m.index_version);
  }
  if (rep.gaps.empty()) throw DataError("metrics contain no ann-sampler steps");
  double sum = 0.0;
  for (std::int64_t g : rep.gaps) {
    sum += static_cast<double>(g);
    rep.max_gap = std::max(rep.max_gap, g);
  }
  rep.mean_gap = sum / static_cast<double>(rep.gaps.size());
  return rep;
}

LossBoundReport lossbound_check(const std::vector<MetricsRecord>& metrics, double loss_eps,
                                double factor) {
  if (metrics.empty()) throw ConfigError("loss-bound check needs at least one metrics row");
  LossBoundReport rep;
  std::vector<double> norms;
  norms.reserve(metrics.size());
  for (const auto& m : metrics) norms.push_back(m.grad_norm_preclip);
  std::sort(norms.begin(), norms.end());
  std::size_t n = norms.size();
  rep.median_norm = n % 2 == 1 ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
  for (const auto& m : metrics)
    if (m.loss < loss_eps && m.grad_norm_preclip >= factor * rep.median_norm) {
      rep.ok = false;
      rep.violations.push_back(m.step);
    }
  return rep;
}

std::vector<double> grad_norms_for_negatives(const EncoderParams& params,
                                             const FeatureVector& query,
                                             const FeatureVector& positive,
                                             const std::vector<FeatureVector>& negatives) {
  std::vector<double> norms;
  norms.reserve(negatives.size());
  for (const auto& neg : negatives)
    norms.push_back(per_sample_grad_norm(params, query, positive, neg));
  return norms;
}

}  // namespace ance
