#include "ancelab/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "ancelab/binio.hpp"
#include "ancelab/rng.hpp"

namespace ance {

std::string to_string(SimKind s) { return s == SimKind::kDot ? "dot" : "cosine"; }

SimKind sim_kind_from_string(const std::string& s) {
  if (s == "dot") return SimKind::kDot;
  if (s == "cosine") return SimKind::kCosine;
  throw ConfigError("unknown similarity kind: " + s);
}

Eigen::Index EncoderParams::num_trainable() const {
  return W.size() + (use_layernorm ? 2 * embed_dim() : 0);
}

Eigen::VectorXd EncoderParams::flatten() const {
  Eigen::VectorXd flat(num_trainable());
  std::copy(W.data(), W.data() + W.size(), flat.data());
  if (use_layernorm) {
    std::copy(ln_gain.data(), ln_gain.data() + ln_gain.size(), flat.data() + W.size());
    std::copy(ln_bias.data(), ln_bias.data() + ln_bias.size(),
              flat.data() + W.size() + ln_gain.size());
  }
  return flat;
}

void EncoderParams::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != num_trainable())
    throw ConfigError("flat parameter vector has wrong length");
  std::copy(flat.data(), flat.data() + W.size(), W.data());
  if (use_layernorm) {
    std::copy(flat.data() + W.size(), flat.data() + W.size() + ln_gain.size(), ln_gain.data());
    std::copy(flat.data() + W.size() + ln_gain.size(), flat.data() + flat.size(),
              ln_bias.data());
  }
}

void EncoderParams::round_to_f32() {
  W = W.cast<float>().cast<double>();
  ln_gain = ln_gain.cast<float>().cast<double>();
  ln_bias = ln_bias.cast<float>().cast<double>();
}

EncoderParams init_params(Eigen::Index feature_dim, Eigen::Index embed_dim, std::uint64_t seed,
                          bool use_layernorm, SimKind sim, bool use_bigrams) {
  if (feature_dim <= 0) throw ConfigError("feature dim must be positive");
  if (embed_dim < 2) throw ConfigError("embed dim must be at least 2");
  EncoderParams p;
  p.W.resize(feature_dim, embed_dim);
  double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  Rng rng(mix_seed(seed, 0x1417));
  for (Eigen::Index r = 0; r < feature_dim; ++r)
    for (Eigen::Index c = 0; c < embed_dim; ++c) p.W(r, c) = rng.uniform(-bound, bound);
  p.ln_gain = Eigen::VectorXd::Ones(embed_dim);
  p.ln_bias = Eigen::VectorXd::Zero(embed_dim);
  p.use_layernorm = use_layernorm;
  p.sim = sim;
  p.use_bigrams = use_bigrams;
  return p;
}

namespace {

struct Trace {
  Eigen::VectorXd h;    // projection W^T x
  Eigen::VectorXd hat;  // normalized (layernorm only)
  double r = 0.0;       // 1 / sqrt(var + eps)
  Eigen::VectorXd e;    // final embedding
};

Trace trace_encode(const EncoderParams& p, const FeatureVector& x) {
  if (x.dim != static_cast<std::uint32_t>(p.feature_dim()))
    throw DataError("dimension mismatch: feature vector dim " + std::to_string(x.dim) +
                    " vs encoder feature dim " + std::to_string(p.feature_dim()));
  Trace t;
  t.h = Eigen::VectorXd::Zero(p.embed_dim());
  for (const auto& [idx, count] : x.entries) t.h += count * p.W.row(idx).transpose();
  if (!t.h.allFinite()) throw NumericError("non-finite values at stage projection");
  if (!p.use_layernorm) {
    t.e = t.h;
    return t;
  }
  double n = static_cast<double>(p.embed_dim());
  double mu = t.h.mean();
  double var = (t.h.array() - mu).square().sum() / n;
  t.r = 1.0 / std::sqrt(var + kLayerNormEps);
  t.hat = (t.h.array() - mu) * t.r;
  t.e = (p.ln_gain.array() * t.hat.array() + p.ln_bias.array()).matrix();
  if (!t.e.allFinite()) throw NumericError("non-finite values at stage layernorm");
  return t;
}

double stable_softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// ds/du and ds/dv for s = score(u, v, sim).
void score_partials(const Eigen::VectorXd& u, const Eigen::VectorXd& v, SimKind sim,
                    Eigen::VectorXd& du, Eigen::VectorXd& dv) {
  if (sim == SimKind::kDot) {
    du = v;
    dv = u;
    return;
  }
  double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) {
    du = Eigen::VectorXd::Zero(u.size());
    dv = Eigen::VectorXd::Zero(v.size());
    return;
  }
  double s = u.dot(v) / (nu * nv);
  du = v / (nu * nv) - (s / (nu * nu)) * u;
  dv = u / (nu * nv) - (s / (nv * nv)) * v;
}

// Chain rule from dL/de back to parameter slots, added into acc.
void backprop_branch(const EncoderParams& p, const FeatureVector& x, const Trace& t,
                     const Eigen::VectorXd& ge, GradientBuffer& acc) {
  Eigen::VectorXd gh;
  if (p.use_layernorm) {
    acc.ln_gain.array() += ge.array() * t.hat.array();
    acc.ln_bias += ge;
    Eigen::ArrayXd ghat = ge.array() * p.ln_gain.array();
    double m1 = ghat.mean();
    double m2 = (ghat * t.hat.array()).mean();
    gh = (t.r * (ghat - m1 - t.hat.array() * m2)).matrix();
  } else {
    gh = ge;
  }
  for (const auto& [idx, count] : x.entries)
    acc.W.row(idx) += count * gh.transpose();
}

const std::vector<double>& weights_of(const TrainTriple& t, std::vector<double>& scratch) {
  if (t.neg_weights.empty()) {
    scratch.assign(t.negatives.size(), 1.0);
    return scratch;
  }
  if (t.neg_weights.size() != t.negatives.size())
    throw ConfigError("neg_weights length does not match negatives");
  for (double w : t.neg_weights)
    if (!(w > 0.0)) throw ConfigError("neg_weights must be positive");
  return t.neg_weights;
}

}  // namespace

Embedding encode(const EncoderParams& p, const FeatureVector& x) {
  return trace_encode(p, x).e;
}

double score(const Embedding& q, const Embedding& d, SimKind sim) {
  if (q.size() != d.size()) throw DataError("dimension mismatch between embeddings");
  double s;
  if (sim == SimKind::kDot) {
    s = q.dot(d);
  } else {
    double nq = q.norm(), nd = d.norm();
    s = (nq == 0.0 || nd == 0.0) ? 0.0 : q.dot(d) / (nq * nd);
  }
  if (!std::isfinite(s)) throw NumericError("non-finite values at stage score");
  return s;
}

double nll_loss(double s_pos, const std::vector<double>& s_neg) {
  if (s_neg.empty()) throw ConfigError("nll_loss needs at least one negative score");
  double m = s_pos;
  for (double s : s_neg) m = std::max(m, s);
  double denom = std::exp(s_pos - m);
  for (double s : s_neg) denom += std::exp(s - m);
  double loss = -(s_pos - m) + std::log(denom);
  if (!std::isfinite(loss)) throw NumericError("non-finite values at stage loss");
  return loss;
}

GradientBuffer GradientBuffer::zeros_like(const EncoderParams& p) {
  GradientBuffer g;
  g.W = RowMatrixXd::Zero(p.feature_dim(), p.embed_dim());
  g.ln_gain = Eigen::VectorXd::Zero(p.embed_dim());
  g.ln_bias = Eigen::VectorXd::Zero(p.embed_dim());
  return g;
}

void GradientBuffer::set_zero() {
  W.setZero();
  ln_gain.setZero();
  ln_bias.setZero();
}

void GradientBuffer::add_scaled(const GradientBuffer& other, double c) {
  W += c * other.W;
  ln_gain += c * other.ln_gain;
  ln_bias += c * other.ln_bias;
}

void GradientBuffer::scale(double c) {
  W *= c;
  ln_gain *= c;
  ln_bias *= c;
}

double GradientBuffer::squared_norm() const {
  return W.squaredNorm() + ln_gain.squaredNorm() + ln_bias.squaredNorm();
}

double GradientBuffer::norm() const { return std::sqrt(squared_norm()); }

Eigen::VectorXd GradientBuffer::flatten(const EncoderParams& p) const {
  Eigen::VectorXd flat(p.num_trainable());
  std::copy(W.data(), W.data() + W.size(), flat.data());
  if (p.use_layernorm) {
    std::copy(ln_gain.data(), ln_gain.data() + ln_gain.size(), flat.data() + W.size());
    std::copy(ln_bias.data(), ln_bias.data() + ln_bias.size(),
              flat.data() + W.size() + ln_gain.size());
  }
  return flat;
}

double triple_loss(const EncoderParams& p, const TrainTriple& t) {
  if (t.negatives.empty()) throw ConfigError("triple has no negatives");
  std::vector<double> scratch;
  const auto& w = weights_of(t, scratch);
  Trace tq = trace_encode(p, t.query);
  Trace tp = trace_encode(p, t.positive);
  double sp = score(tq.e, tp.e, p.sim);
  double loss = 0.0;
  for (std::size_t j = 0; j < t.negatives.size(); ++j) {
    Trace tn = trace_encode(p, t.negatives[j]);
    loss += w[j] * stable_softplus(score(tq.e, tn.e, p.sim) - sp);
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite values at stage loss");
  return loss;
}

double backward_accumulate(const EncoderParams& p, const TrainTriple& t, double scale,
                           GradientBuffer& acc) {
  if (t.negatives.empty()) throw ConfigError("triple has no negatives");
  std::vector<double> scratch;
  const auto& w = weights_of(t, scratch);

  Trace tq = trace_encode(p, t.query);
  Trace tp = trace_encode(p, t.positive);
  std::vector<Trace> tn(t.negatives.size());
  for (std::size_t j = 0; j < t.negatives.size(); ++j)
    tn[j] = trace_encode(p, t.negatives[j]);

  double sp = score(tq.e, tp.e, p.sim);
  double loss = 0.0;
  std::vector<double> coeff(t.negatives.size());  // w_j * sigmoid(s_neg_j - s_pos)
  double coeff_sum = 0.0;
  for (std::size_t j = 0; j < t.negatives.size(); ++j) {
    double z = score(tq.e, tn[j].e, p.sim) - sp;
    loss += w[j] * stable_softplus(z);
    coeff[j] = w[j] * stable_sigmoid(z);
    coeff_sum += coeff[j];
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite values at stage loss");

  Eigen::VectorXd dq, dp, du, dv;
  score_partials(tq.e, tp.e, p.sim, dq, dp);
  Eigen::VectorXd ge_q = -coeff_sum * dq;
  Eigen::VectorXd ge_p = -coeff_sum * dp;
  for (std::size_t j = 0; j < t.negatives.size(); ++j) {
    score_partials(tq.e, tn[j].e, p.sim, du, dv);
    ge_q += coeff[j] * du;
    backprop_branch(p, t.negatives[j], tn[j], scale * coeff[j] * dv, acc);
  }
  backprop_branch(p, t.query, tq, scale * ge_q, acc);
  backprop_branch(p, t.positive, tp, scale * ge_p, acc);
  return loss;
}

BackwardResult backward(const EncoderParams& p, const TrainTriple& t) {
  BackwardResult out;
  out.grads = GradientBuffer::zeros_like(p);
  out.loss = backward_accumulate(p, t, 1.0, out.grads);
  return out;
}

double per_sample_grad_norm(const EncoderParams& p, const FeatureVector& query,
                            const FeatureVector& positive, const FeatureVector& negative) {
  thread_local GradientBuffer ws;
  if (ws.W.rows() != p.feature_dim() || ws.W.cols() != p.embed_dim())
    ws = GradientBuffer::zeros_like(p);
  else
    ws.set_zero();
  TrainTriple t;
  t.query = query;
  t.positive = positive;
  t.negatives.push_back(negative);
  backward_accumulate(p, t, 1.0, ws);
  return ws.norm();
}

namespace {

double* flat_slot(EncoderParams& p, Eigen::Index c) {
  if (c < p.W.size()) return p.W.data() + c;
  c -= p.W.size();
  if (c < p.ln_gain.size()) return p.ln_gain.data() + c;
  c -= p.ln_gain.size();
  return p.ln_bias.data() + c;
}

}  // namespace

double finite_diff_check(const EncoderParams& p, const TrainTriple& t, double step,
                         std::uint64_t seed, int max_coords) {
  if (step <= 0.0) throw ConfigError("finite difference step must be positive");
  if (max_coords <= 0) throw ConfigError("max_coords must be positive");
  Eigen::Index n = p.num_trainable();
  BackwardResult br = backward(p, t);
  Eigen::VectorXd g = br.grads.flatten(p);

  std::vector<std::size_t> coords;
  if (n <= max_coords) {
    for (Eigen::Index i = 0; i < n; ++i) coords.push_back(static_cast<std::size_t>(i));
  } else {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(n)));
    coords = rng.sample_distinct(static_cast<std::size_t>(n),
                                 static_cast<std::size_t>(max_coords));
  }

  EncoderParams work = p;
  double worst = 0.0;
  for (std::size_t c : coords) {
    double* slot = flat_slot(work, static_cast<Eigen::Index>(c));
    double orig = *slot;
    *slot = orig + step;
    double lp = triple_loss(work, t);
    *slot = orig - step;
    double lm = triple_loss(work, t);
    *slot = orig;
    double fd = (lp - lm) / (2.0 * step);
    double gc = g[static_cast<Eigen::Index>(c)];
    double rel = std::abs(fd - gc) / std::max({std::abs(fd), std::abs(gc), 1e-8});
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint32_t kFlagLayerNorm = 1u << 0;
constexpr std::uint32_t kFlagCosine = 1u << 1;
constexpr std::uint32_t kFlagBigrams = 1u << 2;

}  // namespace

void save_checkpoint(const EncoderParams& p, const std::string& path) {
  auto os = open_out(path);
  write_bytes(os, "ANCE", 4);
  write_pod<std::uint32_t>(os, kCkptVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.feature_dim()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.embed_dim()));
  std::uint32_t flags = 0;
  if (p.use_layernorm) flags |= kFlagLayerNorm;
  if (p.sim == SimKind::kCosine) flags |= kFlagCosine;
  if (p.use_bigrams) flags |= kFlagBigrams;
  write_pod<std::uint32_t>(os, flags);
  RowMatrixXf wf = p.W.cast<float>();
  write_bytes(os, wf.data(), sizeof(float) * static_cast<std::size_t>(wf.size()));
  Eigen::VectorXf gf = p.ln_gain.cast<float>();
  write_bytes(os, gf.data(), sizeof(float) * static_cast<std::size_t>(gf.size()));
  Eigen::VectorXf bf = p.ln_bias.cast<float>();
  write_bytes(os, bf.data(), sizeof(float) * static_cast<std::size_t>(bf.size()));
  if (!os) throw DataError("write failed: " + path);
}

EncoderParams load_checkpoint(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "ANCE", "checkpoint");
  auto ver = read_pod<std::uint32_t>(is, "checkpoint version");
  if (ver != kCkptVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(ver));
  auto df = read_pod<std::uint32_t>(is, "feature dim");
  auto de = read_pod<std::uint32_t>(is, "embed dim");
  auto flags = read_pod<std::uint32_t>(is, "flags");
  if (df == 0 || de < 2) throw DataError("checkpoint has invalid dimensions");
  EncoderParams p;
  p.use_layernorm = (flags & kFlagLayerNorm) != 0;
  p.sim = (flags & kFlagCosine) ? SimKind::kCosine : SimKind::kDot;
  p.use_bigrams = (flags & kFlagBigrams) != 0;
  RowMatrixXf wf(df, de);
  read_bytes(is, wf.data(), sizeof(float) * static_cast<std::size_t>(wf.size()), "W matrix");
  p.W = wf.cast<double>();
  Eigen::VectorXf gf(de), bf(de);
  read_bytes(is, gf.data(), sizeof(float) * de, "ln_gain");
  read_bytes(is, bf.data(), sizeof(float) * de, "ln_bias");
  p.ln_gain = gf.cast<double>();
  p.ln_bias = bf.cast<double>();
  return p;
}

}  // namespace ance
