#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ancelab/encoder.hpp"
#include "ancelab/types.hpp"

namespace ance {

// Flat store of float32 corpus embeddings. version records which trainer step
// produced the parameters it was encoded from. Immutable once built; safe for
// concurrent readers.
struct DenseIndex {
  std::int64_t version = 0;
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> row_of;
  RowMatrixXf emb;  // num_docs x embed_dim

  struct IvfData {
    std::uint32_t nlist = 0;
    RowMatrixXf centroids;                         // nlist x embed_dim
    std::vector<std::vector<std::uint32_t>> lists; // rows per cluster
  };
  std::optional<IvfData> ivf;

  std::size_t size() const { return ids.size(); }
  Eigen::Index embed_dim() const { return emb.cols(); }
  // Row as a double vector; scoring always happens in double.
  Embedding row(std::size_t i) const { return emb.row(static_cast<Eigen::Index>(i)).cast<double>(); }
};

// Encodes every doc with the encoder's own featurization settings.
DenseIndex encode_corpus(const EncoderParams& p, const Corpus& corpus, std::int64_t version = 0);

// Exhaustive top-k, score descending, ties by ascending id.
std::vector<ScoredDoc> search_exact(const DenseIndex& idx, const Embedding& query, int k,
                                    SimKind sim);

// Lloyd k-means over the stored embeddings (L2, seeded distinct-row init,
// empty clusters reseeded from the farthest point). Every row lands in
// exactly one list.
void build_ivf(DenseIndex& idx, int nlist, int iters, std::uint64_t seed);

// Scores rows of the nprobe closest clusters only. nprobe = nlist scans
// everything and matches search_exact.
std::vector<ScoredDoc> search_ivf(const DenseIndex& idx, const Embedding& query, int k,
                                  int nprobe, SimKind sim);

// Treats rows as passages "{parent}#p{k}"; a parent doc scores as the max
// over its passages. Returns parent-level results.
std::vector<ScoredDoc> search_maxp(const DenseIndex& idx, const Embedding& query, int k,
                                   SimKind sim);

// "{parent}#p{k}" -> parent; error when the id lacks the passage marker.
std::string parent_of_passage(const std::string& passage_id);

void save_dense_index(const DenseIndex& idx, const std::string& path);
DenseIndex load_dense_index(const std::string& path);

}  // namespace ance
