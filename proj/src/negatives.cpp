#include "ancelab/negatives.hpp"

#include <algorithm>
#include <unordered_set>

#include "ancelab/corpus.hpp"

namespace ance {

std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::kRandInBatch: return "rand";
    case SamplerKind::kNceInBatch: return "nce";
    case SamplerKind::kBm25Top: return "bm25";
    case SamplerKind::kBm25PlusRand: return "bm25rand";
    case SamplerKind::kAnce: return "ance";
  }
  return "?";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "rand") return SamplerKind::kRandInBatch;
  if (s == "nce") return SamplerKind::kNceInBatch;
  if (s == "bm25") return SamplerKind::kBm25Top;
  if (s == "bm25rand") return SamplerKind::kBm25PlusRand;
  if (s == "ance") return SamplerKind::kAnce;
  throw ConfigError("unknown sampler: " + s + " (expected rand|nce|bm25|bm25rand|ance)");
}

namespace {

void check_cfg(const SamplerConfig& cfg) {
  if (cfg.pool_k < 1) throw ConfigError("sampler pool_k must be at least 1");
  if (cfg.per_pos < 1) throw ConfigError("sampler per_pos must be at least 1");
}

const Corpus& need_corpus(const SamplerContext& ctx) {
  if (!ctx.corpus) throw ConfigError("sampler context lacks a corpus");
  return *ctx.corpus;
}

const Judgments& need_judgments(const SamplerContext& ctx) {
  if (!ctx.judgments) throw ConfigError("sampler context lacks judgments");
  return *ctx.judgments;
}

// One corpus-uniform draw excluding docs relevant to qid. Uniform over the
// eligible set, so the recorded (prob, pool_size) keep the importance weight
// at exactly 1.
SampledNegative corpus_uniform_draw(const std::string& qid, const SamplerContext& ctx,
                                    Rng& rng) {
  const Corpus& corpus = need_corpus(ctx);
  const Judgments& judg = need_judgments(ctx);
  std::size_t relevant_in_corpus = 0;
  for (const auto& did : judg.relevant_docs(qid))
    if (corpus.contains(did)) ++relevant_in_corpus;
  if (relevant_in_corpus >= corpus.size())
    throw DataError("no eligible negative for query " + qid + ": every doc is relevant");
  std::size_t eligible = corpus.size() - relevant_in_corpus;
  for (;;) {
    const Document& d = corpus.docs[rng.below(corpus.size())];
    if (judg.is_relevant(qid, d.id)) continue;
    SampledNegative n;
    n.doc_id = d.id;
    n.prob = 1.0 / static_cast<double>(eligible);
    n.pool_size = static_cast<int>(eligible);
    n.fallback = true;
    return n;
  }
}

// Other items' positives, excluding this query's relevants. Multiset: one
// slot per batch item, so uniform slot draws are uniform over items.
std::vector<std::string> in_batch_slots(const Batch& batch, std::size_t item_idx,
                                        const Judgments& judg) {
  const auto& me = batch.items[item_idx];
  std::vector<std::string> slots;
  for (std::size_t j = 0; j < batch.items.size(); ++j) {
    if (j == item_idx) continue;
    const std::string& cand = batch.items[j].positive;
    if (judg.is_relevant(me.query_id, cand)) continue;
    slots.push_back(cand);
  }
  return slots;
}

std::vector<SampledNegative> uniform_from_pool(const std::vector<std::string>& pool,
                                               const std::string& qid, int per_pos,
                                               const SamplerContext& ctx, Rng& rng,
                                               std::int64_t index_version) {
  std::vector<SampledNegative> out;
  out.reserve(static_cast<std::size_t>(per_pos));
  for (int i = 0; i < per_pos; ++i) {
    if (pool.empty()) {
      SampledNegative n = corpus_uniform_draw(qid, ctx, rng);
      n.index_version = index_version;
      out.push_back(std::move(n));
    } else {
      SampledNegative n;
      n.doc_id = pool[rng.below(pool.size())];
      n.prob = 1.0 / static_cast<double>(pool.size());
      n.pool_size = static_cast<int>(pool.size());
      n.index_version = index_version;
      out.push_back(std::move(n));
    }
  }
  return out;
}

std::vector<std::string> bm25_pool(const BatchItem& item, const SamplerConfig& cfg,
                                   const SamplerContext& ctx) {
  if (!ctx.sparse) throw ConfigError("bm25 sampler needs an inverted index");
  const Judgments& judg = need_judgments(ctx);
  std::vector<std::string> pool;
  for (const auto& sd : bm25_top_k(*ctx.sparse, item.query_text, cfg.pool_k))
    if (!judg.is_relevant(item.query_id, sd.id)) pool.push_back(sd.id);
  return pool;
}

std::vector<std::string> ance_pool(const BatchItem& item, const SamplerConfig& cfg,
                                   const SamplerContext& ctx) {
  if (!ctx.dense) throw ConfigError("ance sampler needs a published dense index");
  if (!ctx.params) throw ConfigError("ance sampler needs encoder params");
  const Judgments& judg = need_judgments(ctx);
  const EncoderParams& p = *ctx.params;
  FeaturizeOptions fopt{static_cast<std::uint32_t>(p.feature_dim()), p.use_bigrams};
  Embedding q = encode(p, featurize(item.query_text, fopt));
  std::vector<std::string> pool;
  for (const auto& sd : search_exact(*ctx.dense, q, cfg.pool_k, p.sim))
    if (!judg.is_relevant(item.query_id, sd.id)) pool.push_back(sd.id);
  return pool;
}

}  // namespace

std::vector<SampledNegative> sample_rand_in_batch(const Batch& batch, std::size_t item_idx,
                                                  const SamplerConfig& cfg,
                                                  const SamplerContext& ctx, Rng& rng) {
  check_cfg(cfg);
  if (batch.items.size() < 2) throw ConfigError("in-batch sampling needs batch size >= 2");
  auto slots = in_batch_slots(batch, item_idx, need_judgments(ctx));
  return uniform_from_pool(slots, batch.items[item_idx].query_id, cfg.per_pos, ctx, rng, -1);
}

std::vector<SampledNegative> sample_nce_in_batch(const Batch& batch, std::size_t item_idx,
                                                 const SamplerConfig& cfg,
                                                 const SamplerContext& ctx, Rng& rng) {
  check_cfg(cfg);
  if (batch.items.size() < 2) throw ConfigError("in-batch sampling needs batch size >= 2");
  if (!ctx.params) throw ConfigError("nce sampler needs encoder params");
  const auto& me = batch.items[item_idx];
  auto slots = in_batch_slots(batch, item_idx, need_judgments(ctx));
  std::sort(slots.begin(), slots.end());
  slots.erase(std::unique(slots.begin(), slots.end()), slots.end());

  const EncoderParams& p = *ctx.params;
  const Corpus& corpus = need_corpus(ctx);
  FeaturizeOptions fopt{static_cast<std::uint32_t>(p.feature_dim()), p.use_bigrams};
  Embedding q = encode(p, featurize(me.query_text, fopt));
  std::vector<ScoredDoc> scored;
  scored.reserve(slots.size());
  for (const auto& did : slots)
    scored.push_back(ScoredDoc{did, score(q, encode(p, featurize(corpus.at(did).text, fopt)), p.sim)});
  std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });

  std::vector<SampledNegative> out;
  for (int i = 0; i < cfg.per_pos; ++i) {
    if (static_cast<std::size_t>(i) < scored.size()) {
      SampledNegative n;
      n.doc_id = scored[static_cast<std::size_t>(i)].id;
      n.prob = 1.0;  // deterministic choice: a point mass
      n.pool_size = 1;
      out.push_back(std::move(n));
    } else {
      out.push_back(corpus_uniform_draw(me.query_id, ctx, rng));
    }
  }
  return out;
}

std::vector<SampledNegative> sample_bm25(const BatchItem& item, const SamplerConfig& cfg,
                                         const SamplerContext& ctx, Rng& rng) {
  check_cfg(cfg);
  auto pool = bm25_pool(item, cfg, ctx);
  return uniform_from_pool(pool, item.query_id, cfg.per_pos, ctx, rng, -1);
}

std::vector<SampledNegative> sample_bm25_plus_rand(const BatchItem& item, std::size_t item_idx,
                                                   const SamplerConfig& cfg,
                                                   const SamplerContext& ctx, Rng& rng) {
  check_cfg(cfg);
  auto pool = bm25_pool(item, cfg, ctx);
  std::vector<SampledNegative> out;
  for (int slot = 0; slot < cfg.per_pos; ++slot) {
    std::size_t position = item_idx * static_cast<std::size_t>(cfg.per_pos) +
                           static_cast<std::size_t>(slot);
    bool use_bm25 = position % 2 == 0;
    if (use_bm25 && !pool.empty()) {
      SampledNegative n;
      n.doc_id = pool[rng.below(pool.size())];
      n.prob = 1.0 / static_cast<double>(pool.size());
      n.pool_size = static_cast<int>(pool.size());
      out.push_back(std::move(n));
    } else {
      out.push_back(corpus_uniform_draw(item.query_id, ctx, rng));
    }
  }
  return out;
}

std::vector<SampledNegative> sample_ance(const BatchItem& item, const SamplerConfig& cfg,
                                         const SamplerContext& ctx, Rng& rng) {
  check_cfg(cfg);
  auto pool = ance_pool(item, cfg, ctx);
  return uniform_from_pool(pool, item.query_id, cfg.per_pos, ctx, rng, ctx.dense->version);
}

std::vector<std::vector<SampledNegative>> sample_negatives(const Batch& batch,
                                                           const SamplerConfig& cfg,
                                                           const SamplerContext& ctx,
                                                           std::uint64_t step) {
  std::vector<std::vector<SampledNegative>> out;
  out.reserve(batch.items.size());
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    Rng rng(mix_seed(cfg.seed, step, i));
    switch (cfg.kind) {
      case SamplerKind::kRandInBatch:
        out.push_back(sample_rand_in_batch(batch, i, cfg, ctx, rng));
        break;
      case SamplerKind::kNceInBatch:
        out.push_back(sample_nce_in_batch(batch, i, cfg, ctx, rng));
        break;
      case SamplerKind::kBm25Top:
        out.push_back(sample_bm25(batch.items[i], cfg, ctx, rng));
        break;
      case SamplerKind::kBm25PlusRand:
        out.push_back(sample_bm25_plus_rand(batch.items[i], i, cfg, ctx, rng));
        break;
      case SamplerKind::kAnce:
        out.push_back(sample_ance(batch.items[i], cfg, ctx, rng));
        break;
    }
  }
  return out;
}

std::vector<std::string> candidate_pool(const Batch& batch, std::size_t item_idx,
                                        const SamplerConfig& cfg, const SamplerContext& ctx) {
  check_cfg(cfg);
  switch (cfg.kind) {
    case SamplerKind::kRandInBatch:
    case SamplerKind::kNceInBatch: {
      auto slots = in_batch_slots(batch, item_idx, need_judgments(ctx));
      std::sort(slots.begin(), slots.end());
      slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
      return slots;
    }
    case SamplerKind::kBm25Top:
    case SamplerKind::kBm25PlusRand:
      return bm25_pool(batch.items[item_idx], cfg, ctx);
    case SamplerKind::kAnce:
      return ance_pool(batch.items[item_idx], cfg, ctx);
  }
  return {};
}

}  // namespace ance
