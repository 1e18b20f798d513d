#include "ancelab/dense_index.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "ancelab/binio.hpp"
#include "ancelab/corpus.hpp"
#include "ancelab/rng.hpp"

namespace ance {

namespace {

std::vector<ScoredDoc> rank_scored(std::vector<ScoredDoc> scored, int k) {
  auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  std::size_t keep = std::min(scored.size(), static_cast<std::size_t>(k));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), better);
  scored.resize(keep);
  return scored;
}

double score_row(const DenseIndex& idx, std::size_t row, const Embedding& q, double q_norm,
                 SimKind sim) {
  auto r = idx.emb.row(static_cast<Eigen::Index>(row));
  double dot = r.cast<double>().matrix().dot(q);
  if (sim == SimKind::kDot) return dot;
  double rn = r.cast<double>().matrix().norm();
  return (rn == 0.0 || q_norm == 0.0) ? 0.0 : dot / (rn * q_norm);
}

}  // namespace

DenseIndex encode_corpus(const EncoderParams& p, const Corpus& corpus, std::int64_t version) {
  DenseIndex idx;
  idx.version = version;
  idx.ids.reserve(corpus.size());
  idx.emb.resize(static_cast<Eigen::Index>(corpus.size()), p.embed_dim());
  FeaturizeOptions fopt{static_cast<std::uint32_t>(p.feature_dim()), p.use_bigrams};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Document& d = corpus.docs[i];
    idx.ids.push_back(d.id);
    idx.row_of.emplace(d.id, i);
    Embedding e = encode(p, featurize(d.text, fopt));
    idx.emb.row(static_cast<Eigen::Index>(i)) = e.cast<float>();
  }
  return idx;
}

std::vector<ScoredDoc> search_exact(const DenseIndex& idx, const Embedding& query, int k,
                                    SimKind sim) {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (query.size() != idx.embed_dim()) throw DataError("dimension mismatch in search");
  double qn = query.norm();
  std::vector<ScoredDoc> scored;
  scored.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    scored.push_back(ScoredDoc{idx.ids[i], score_row(idx, i, query, qn, sim)});
  return rank_scored(std::move(scored), k);
}

void build_ivf(DenseIndex& idx, int nlist, int iters, std::uint64_t seed) {
  const std::size_t n = idx.size();
  if (nlist < 1) throw ConfigError("nlist must be at least 1");
  if (static_cast<std::size_t>(nlist) > n)
    throw ConfigError("nlist exceeds the number of rows");
  if (iters < 1) throw ConfigError("kmeans iterations must be at least 1");
  const Eigen::Index d = idx.embed_dim();
  RowMatrixXd x = idx.emb.cast<double>();

  Rng rng(mix_seed(seed, 0x4b6d));
  auto init_rows = rng.sample_distinct(n, static_cast<std::size_t>(nlist));
  RowMatrixXd cent(nlist, d);
  for (int c = 0; c < nlist; ++c)
    cent.row(c) = x.row(static_cast<Eigen::Index>(init_rows[static_cast<std::size_t>(c)]));

  std::vector<int> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  auto assign_all = [&]() {
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < nlist; ++c) {
        double dd = (x.row(static_cast<Eigen::Index>(i)) - cent.row(c)).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      assign[i] = best;
      dist[i] = best_d;
    }
  };

  for (int it = 0; it < iters; ++it) {
    assign_all();
    RowMatrixXd sums = RowMatrixXd::Zero(nlist, d);
    std::vector<std::size_t> counts(static_cast<std::size_t>(nlist), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    std::vector<bool> stolen(n, false);
    for (int c = 0; c < nlist; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        cent.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Reseed an empty cluster from the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i)
          if (!stolen[i] && dist[i] > far_d) {
            far_d = dist[i];
            far = i;
          }
        stolen[far] = true;
        cent.row(c) = x.row(static_cast<Eigen::Index>(far));
      }
    }
  }
  assign_all();

  DenseIndex::IvfData ivf;
  ivf.nlist = static_cast<std::uint32_t>(nlist);
  ivf.centroids = cent.cast<float>();
  ivf.lists.assign(static_cast<std::size_t>(nlist), {});
  for (std::size_t i = 0; i < n; ++i)
    ivf.lists[static_cast<std::size_t>(assign[i])].push_back(static_cast<std::uint32_t>(i));
  idx.ivf = std::move(ivf);
}

std::vector<ScoredDoc> search_ivf(const DenseIndex& idx, const Embedding& query, int k,
                                  int nprobe, SimKind sim) {
  if (!idx.ivf) throw DataError("index has no IVF structure");
  if (k < 1) throw ConfigError("k must be at least 1");
  const auto& ivf = *idx.ivf;
  if (nprobe < 1 || static_cast<std::uint32_t>(nprobe) > ivf.nlist)
    throw ConfigError("nprobe must be in [1, nlist]");
  if (query.size() != idx.embed_dim()) throw DataError("dimension mismatch in search");

  double qn = query.norm();
  // Rank clusters by similarity of the query to each centroid.
  std::vector<std::pair<double, std::uint32_t>> cl(ivf.nlist);
  for (std::uint32_t c = 0; c < ivf.nlist; ++c) {
    auto r = ivf.centroids.row(static_cast<Eigen::Index>(c));
    double dot = r.cast<double>().matrix().dot(query);
    double s = dot;
    if (sim == SimKind::kCosine) {
      double rn = r.cast<double>().matrix().norm();
      s = (rn == 0.0 || qn == 0.0) ? 0.0 : dot / (rn * qn);
    }
    cl[c] = {s, c};
  }
  std::partial_sort(cl.begin(), cl.begin() + nprobe, cl.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });

  std::vector<ScoredDoc> scored;
  for (int p = 0; p < nprobe; ++p)
    for (std::uint32_t row : ivf.lists[cl[static_cast<std::size_t>(p)].second])
      scored.push_back(ScoredDoc{idx.ids[row], score_row(idx, row, query, qn, sim)});
  return rank_scored(std::move(scored), k);
}

std::string parent_of_passage(const std::string& passage_id) {
  auto pos = passage_id.rfind("#p");
  if (pos == std::string::npos || pos == 0 || pos + 2 >= passage_id.size())
    throw DataError("id '" + passage_id + "' does not follow the '{parent}#p{k}' convention");
  for (std::size_t i = pos + 2; i < passage_id.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(passage_id[i])))
      throw DataError("id '" + passage_id + "' does not follow the '{parent}#p{k}' convention");
  return passage_id.substr(0, pos);
}

std::vector<ScoredDoc> search_maxp(const DenseIndex& idx, const Embedding& query, int k,
                                   SimKind sim) {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (query.size() != idx.embed_dim()) throw DataError("dimension mismatch in search");
  double qn = query.norm();
  std::unordered_map<std::string, double> best;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::string parent = parent_of_passage(idx.ids[i]);
    double s = score_row(idx, i, query, qn, sim);
    auto [it, fresh] = best.emplace(std::move(parent), s);
    if (!fresh && s > it->second) it->second = s;
  }
  std::vector<ScoredDoc> scored;
  scored.reserve(best.size());
  for (auto& [id, s] : best) scored.push_back(ScoredDoc{id, s});
  return rank_scored(std::move(scored), k);
}

void save_dense_index(const DenseIndex& idx, const std::string& path) {
  auto os = open_out(path);
  write_bytes(os, "ANCX", 4);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(idx.version));
  write_pod<std::uint64_t>(os, idx.size());
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(idx.embed_dim()));
  for (const auto& id : idx.ids) write_str(os, id);
  write_bytes(os, idx.emb.data(), sizeof(float) * static_cast<std::size_t>(idx.emb.size()));
  if (idx.ivf) {
    const auto& ivf = *idx.ivf;
    write_pod<std::uint32_t>(os, ivf.nlist);
    write_bytes(os, ivf.centroids.data(),
                sizeof(float) * static_cast<std::size_t>(ivf.centroids.size()));
    for (const auto& list : ivf.lists) {
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(list.size()));
      for (std::uint32_t row : list) write_pod<std::uint32_t>(os, row);
    }
  }
  if (!os) throw DataError("write failed: " + path);
}

DenseIndex load_dense_index(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "ANCX", "dense index");
  DenseIndex idx;
  idx.version = read_pod<std::uint32_t>(is, "index version");
  auto n = read_pod<std::uint64_t>(is, "row count");
  auto d = read_pod<std::uint32_t>(is, "embed dim");
  if (d == 0) throw DataError("dense index has zero embed dim");
  idx.ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    idx.ids.push_back(read_str(is, "doc id"));
    if (!idx.row_of.emplace(idx.ids.back(), i).second)
      throw DataError("duplicate doc id in dense index: " + idx.ids.back());
  }
  idx.emb.resize(static_cast<Eigen::Index>(n), d);
  read_bytes(is, idx.emb.data(), sizeof(float) * static_cast<std::size_t>(idx.emb.size()),
             "embedding matrix");
  if (is.peek() != std::char_traits<char>::eof()) {
    DenseIndex::IvfData ivf;
    ivf.nlist = read_pod<std::uint32_t>(is, "ivf nlist");
    if (ivf.nlist == 0 || ivf.nlist > n) throw DataError("bad ivf nlist");
    ivf.centroids.resize(static_cast<Eigen::Index>(ivf.nlist), d);
    read_bytes(is, ivf.centroids.data(),
               sizeof(float) * static_cast<std::size_t>(ivf.centroids.size()), "ivf centroids");
    ivf.lists.assign(ivf.nlist, {});
    std::vector<bool> seen(n, false);
    for (auto& list : ivf.lists) {
      auto cnt = read_pod<std::uint32_t>(is, "ivf list length");
      list.reserve(cnt);
      for (std::uint32_t i = 0; i < cnt; ++i) {
        auto row = read_pod<std::uint32_t>(is, "ivf row");
        if (row >= n || seen[row]) throw DataError("ivf lists are not a partition of rows");
        seen[row] = true;
        list.push_back(row);
      }
    }
    for (std::uint64_t i = 0; i < n; ++i)
      if (!seen[i]) throw DataError("ivf lists are not a partition of rows");
    idx.ivf = std::move(ivf);
  }
  return idx;
}

}  // namespace ance
