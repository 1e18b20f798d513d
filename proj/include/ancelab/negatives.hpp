#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ancelab/dense_index.hpp"
#include "ancelab/encoder.hpp"
#include "ancelab/rng.hpp"
#include "ancelab/sparse.hpp"
#include "ancelab/types.hpp"

namespace ance {

enum class SamplerKind { kRandInBatch, kNceInBatch, kBm25Top, kBm25PlusRand, kAnce };

std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kRandInBatch;
  int pool_k = 200;  // candidate pool depth: 100 for bm25, 200 for ance
  int per_pos = 1;   // negatives per positive
  std::uint64_t seed = 7;
};

struct BatchItem {
  std::string query_id;
  std::string query_text;
  std::string positive;
};

struct Batch {
  std::vector<BatchItem> items;
};

struct SampledNegative {
  std::string doc_id;
  double prob = 1.0;                // draw probability within the candidate pool
  int pool_size = 1;                // N in the 1/(N p) importance weight
  std::int64_t index_version = -1;  // ANN index version consulted, -1 when none
  bool fallback = false;            // corpus-uniform fallback was taken
};

// Everything a sampler may consult. params/sparse/dense are only required by
// the kinds that use them. dense is a snapshot taken once per batch, so one
// batch never observes two index versions.
struct SamplerContext {
  const Corpus* corpus = nullptr;
  const Judgments* judgments = nullptr;
  const EncoderParams* params = nullptr;
  const InvertedIndex* sparse = nullptr;
  std::shared_ptr<const DenseIndex> dense;
};

// Uniform draws from the other items' positives, excluding docs relevant to
// this item's query. Empty pool falls back to corpus-uniform (still excluding
// relevants).
std::vector<SampledNegative> sample_rand_in_batch(const Batch& batch, std::size_t item_idx,
                                                  const SamplerConfig& cfg,
                                                  const SamplerContext& ctx, Rng& rng);

// The per_pos highest-scoring other-item positives under current params;
// deterministic except for the fallback path.
std::vector<SampledNegative> sample_nce_in_batch(const Batch& batch, std::size_t item_idx,
                                                 const SamplerConfig& cfg,
                                                 const SamplerContext& ctx, Rng& rng);

// Uniform draws from the BM25 top-pool_k minus relevants.
std::vector<SampledNegative> sample_bm25(const BatchItem& item, const SamplerConfig& cfg,
                                         const SamplerContext& ctx, Rng& rng);

// Alternates BM25 and corpus-uniform draws 1:1, starting with BM25; the
// schedule position is item_idx * per_pos + slot.
std::vector<SampledNegative> sample_bm25_plus_rand(const BatchItem& item, std::size_t item_idx,
                                                   const SamplerConfig& cfg,
                                                   const SamplerContext& ctx, Rng& rng);

// Encodes the query with current params, retrieves top pool_k from the
// published index snapshot (possibly stale by design), excludes relevants,
// draws uniformly, and records the index version used.
std::vector<SampledNegative> sample_ance(const BatchItem& item, const SamplerConfig& cfg,
                                         const SamplerContext& ctx, Rng& rng);

// Batch-level dispatch; per-item rng streams are keyed by (seed, step, item).
std::vector<std::vector<SampledNegative>> sample_negatives(const Batch& batch,
                                                           const SamplerConfig& cfg,
                                                           const SamplerContext& ctx,
                                                           std::uint64_t step);

// The candidate pool (exclusions applied, before drawing) the sampler would
// use; duplicates removed. Used by overlap diagnostics.
std::vector<std::string> candidate_pool(const Batch& batch, std::size_t item_idx,
                                        const SamplerConfig& cfg, const SamplerContext& ctx);

}  // namespace ance
