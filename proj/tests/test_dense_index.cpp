#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ancelab/corpus.hpp"
#include "ancelab/dense_index.hpp"
#include "ancelab/rng.hpp"
#include "test_util.hpp"

using namespace ance;

namespace {

DenseIndex make_index(const std::vector<std::vector<float>>& rows,
                      std::int64_t version = 0) {
  DenseIndex idx;
  idx.version = version;
  idx.emb.resize(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    idx.ids.push_back("d" + std::to_string(i));
    idx.row_of[idx.ids.back()] = i;
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      idx.emb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return idx;
}

DenseIndex random_index(std::uint64_t seed, int n, int d) {
  Rng rng(seed);
  std::vector<std::vector<float>> rows(static_cast<std::size_t>(n));
  for (auto& r : rows) {
    r.resize(static_cast<std::size_t>(d));
    for (auto& v : r) v = static_cast<float>(rng.unit() * 2.0 - 1.0);
  }
  return make_index(rows);
}

// Index of well-separated blobs: cluster c sits at 100*c along axis c % d.
DenseIndex blob_index(std::uint64_t seed, int clusters, int per_cluster, int d) {
  Rng rng(seed);
  std::vector<std::vector<float>> rows;
  for (int c = 0; c < clusters; ++c)
    for (int i = 0; i < per_cluster; ++i) {
      std::vector<float> r(static_cast<std::size_t>(d));
      for (auto& v : r) v = static_cast<float>(rng.unit() * 0.5 - 0.25);
      r[static_cast<std::size_t>(c % d)] += 100.0f * static_cast<float>(c + 1);
      rows.push_back(std::move(r));
    }
  return make_index(rows);
}

std::vector<ScoredDoc> brute_top_k(const DenseIndex& idx, const Embedding& q, int k,
                                   SimKind sim) {
  std::vector<ScoredDoc> all;
  for (std::size_t i = 0; i < idx.size(); ++i)
    all.push_back({idx.ids[i], score(q, idx.row(i), sim)});
  std::sort(all.begin(), all.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  return all;
}

}  // namespace

TEST_SUITE("dense_index") {

TEST_CASE("encode_corpus rows are float32 images of encode()") {
  Corpus c;
  c.add(Document{"d0", "alpha beta gamma", ""});
  c.add(Document{"d1", "delta epsilon", ""});
  auto p = init_params(256, 8, 5, true);
  auto idx = encode_corpus(p, c, 42);
  CHECK(idx.version == 42);
  CHECK(idx.size() == 2);
  CHECK(idx.embed_dim() == 8);
  FeaturizeOptions fopt{256, false};
  for (std::size_t i = 0; i < 2; ++i) {
    auto e = encode(p, featurize(c.docs[i].text, fopt));
    for (Eigen::Index k = 0; k < 8; ++k)
      CHECK(idx.emb(static_cast<Eigen::Index>(i), k) == static_cast<float>(e[k]));
  }
  CHECK(idx.row_of.at("d1") == 1);

  auto again = encode_corpus(p, c, 42);
  CHECK((again.emb - idx.emb).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("encode_corpus honors the encoder's bigram flag") {
  Corpus c;
  c.add(Document{"d0", "a b", ""});
  auto uni = init_params(4096, 4, 5, false, SimKind::kDot, false);
  auto bi = uni;
  bi.use_bigrams = true;
  auto iu = encode_corpus(uni, c);
  auto ib = encode_corpus(bi, c);
  CHECK((iu.emb - ib.emb).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("search_exact on a hand-built orthogonal index") {
  auto idx = make_index({{1, 0}, {0, 1}, {-1, 0}});
  Embedding q(2);
  q << 1, 0.1;
  auto top = search_exact(idx, q, 2, SimKind::kDot);
  REQUIRE(top.size() == 2);
  CHECK(top[0].id == "d0");
  CHECK(top[0].score == doctest::Approx(1.0));
  CHECK(top[1].id == "d1");
  CHECK(top[1].score == doctest::Approx(0.1));

  auto all = search_exact(idx, q, 10, SimKind::kDot);
  CHECK(all.size() == 3);  // k beyond N returns the full ranking
  CHECK(all[2].id == "d2");
}

TEST_CASE("search_exact breaks score ties by ascending id") {
  auto idx = make_index({{1, 0}, {1, 0}, {1, 0}});
  Embedding q(2);
  q << 1, 0;
  auto top = search_exact(idx, q, 3, SimKind::kDot);
  CHECK(top[0].id == "d0");
  CHECK(top[1].id == "d1");
  CHECK(top[2].id == "d2");
}

TEST_CASE("search_exact matches a brute-force sort on random instances") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto idx = random_index(900 + seed, 20, 4);
    Rng rng(seed);
    Embedding q(4);
    for (int j = 0; j < 4; ++j) q[j] = rng.unit() * 2.0 - 1.0;
    SimKind sim = seed % 2 == 0 ? SimKind::kDot : SimKind::kCosine;
    auto got = search_exact(idx, q, 7, sim);
    auto want = brute_top_k(idx, q, 7, sim);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == want[i].id);
      CHECK(got[i].score == doctest::Approx(want[i].score).epsilon(1e-12));
    }
  }
}

TEST_CASE("search_exact validates inputs") {
  auto idx = make_index({{1, 0}});
  Embedding q(2);
  q << 1, 0;
  CHECK_THROWS_AS(search_exact(idx, q, 0, SimKind::kDot), ConfigError);
  Embedding bad(3);
  bad << 1, 0, 0;
  CHECK_THROWS_AS(search_exact(idx, bad, 1, SimKind::kDot), DataError);
  DenseIndex empty;
  CHECK_THROWS_AS(search_exact(empty, q, 1, SimKind::kDot), DataError);
}

TEST_CASE("build_ivf partitions every row exactly once") {
  auto idx = random_index(7, 37, 4);
  build_ivf(idx, 5, 10, 3);
  REQUIRE(idx.ivf.has_value());
  CHECK(idx.ivf->nlist == 5);
  CHECK(idx.ivf->centroids.rows() == 5);
  std::set<std::uint32_t> seen;
  std::size_t total = 0;
  for (const auto& list : idx.ivf->lists) {
    total += list.size();
    for (auto r : list) {
      CHECK(seen.insert(r).second);
      CHECK(r < 37u);
    }
  }
  CHECK(total == 37);
}

TEST_CASE("build_ivf with one cluster holds everything") {
  auto idx = random_index(8, 10, 3);
  build_ivf(idx, 1, 5, 1);
  REQUIRE(idx.ivf.has_value());
  CHECK(idx.ivf->lists[0].size() == 10);
}

TEST_CASE("build_ivf recovers two well-separated blobs for any seed") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto idx = blob_index(9, 2, 8, 4);
    build_ivf(idx, 2, 25, seed);
    for (const auto& list : idx.ivf->lists) {
      REQUIRE(list.size() == 8);
      std::uint32_t blob = list[0] / 8;
      for (auto r : list) CHECK(r / 8 == blob);
    }
  }
}

TEST_CASE("build_ivf is deterministic and validates nlist") {
  auto a = random_index(10, 20, 3);
  auto b = random_index(10, 20, 3);
  build_ivf(a, 4, 8, 5);
  build_ivf(b, 4, 8, 5);
  CHECK((a.ivf->centroids - b.ivf->centroids).cwiseAbs().maxCoeff() == 0.0f);
  for (std::size_t l = 0; l < 4; ++l) CHECK(a.ivf->lists[l] == b.ivf->lists[l]);

  auto c = random_index(10, 5, 3);
  CHECK_THROWS_AS(build_ivf(c, 6, 5, 1), ConfigError);
  CHECK_THROWS_AS(build_ivf(c, 0, 5, 1), ConfigError);
}

TEST_CASE("search_ivf with nprobe = nlist equals search_exact") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto idx = random_index(40 + seed, 30, 4);
    build_ivf(idx, 6, 10, seed);
    Rng rng(seed + 1);
    Embedding q(4);
    for (int j = 0; j < 4; ++j) q[j] = rng.unit() - 0.5;
    auto exact = search_exact(idx, q, 10, SimKind::kDot);
    auto ivf = search_ivf(idx, q, 10, 6, SimKind::kDot);
    REQUIRE(ivf.size() == exact.size());
    for (std::size_t i = 0; i < ivf.size(); ++i) {
      CHECK(ivf[i].id == exact[i].id);
      CHECK(ivf[i].score == doctest::Approx(exact[i].score).epsilon(1e-12));
    }
  }
}

TEST_CASE("search_ivf probing the right blob matches exact at nprobe=1") {
  auto idx = blob_index(12, 2, 8, 4);
  build_ivf(idx, 2, 25, 2);
  // Query sitting on blob 1's center: axis 1, magnitude 200.
  Embedding q = Embedding::Zero(4);
  q[1] = 200.0;
  auto got = search_ivf(idx, q, 5, 1, SimKind::kDot);
  auto want = search_exact(idx, q, 5, SimKind::kDot);
  REQUIRE(got.size() == 5);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].id == want[i].id);
}

TEST_CASE("search_ivf recall is non-decreasing in nprobe") {
  auto idx = random_index(77, 200, 6);
  build_ivf(idx, 16, 12, 5);
  Rng rng(123);
  double prev = -1.0;
  for (int nprobe : {1, 2, 4, 8, 16}) {
    double recall = 0.0;
    Rng qr(123);
    for (int trial = 0; trial < 20; ++trial) {
      Embedding q(6);
      for (int j = 0; j < 6; ++j) q[j] = qr.unit() - 0.5;
      auto exact = search_exact(idx, q, 10, SimKind::kDot);
      auto approx = search_ivf(idx, q, 10, nprobe, SimKind::kDot);
      std::set<std::string> truth;
      for (const auto& s : exact) truth.insert(s.id);
      for (const auto& s : approx) recall += truth.count(s.id) ? 1.0 : 0.0;
    }
    recall /= 20.0 * 10.0;
    CHECK(recall >= prev);
    prev = recall;
  }
  CHECK(prev == doctest::Approx(1.0));  // nprobe = nlist scans everything
}

TEST_CASE("search_ivf validates state and arguments") {
  auto idx = random_index(13, 10, 3);
  Embedding q = Embedding::Zero(3);
  CHECK_THROWS_AS(search_ivf(idx, q, 3, 1, SimKind::kDot), DataError);  // no ivf yet
  build_ivf(idx, 2, 5, 1);
  CHECK_THROWS_AS(search_ivf(idx, q, 3, 0, SimKind::kDot), ConfigError);
  CHECK_THROWS_AS(search_ivf(idx, q, 3, 3, SimKind::kDot), ConfigError);  // > nlist
}

TEST_CASE("parent_of_passage strips the passage suffix") {
  CHECK(parent_of_passage("d1#p3") == "d1");
  CHECK(parent_of_passage("doc#with#p2") == "doc#with");
  CHECK_THROWS_AS(parent_of_passage("d1"), DataError);
  CHECK_THROWS_AS(parent_of_passage("#p1"), DataError);
  CHECK_THROWS_AS(parent_of_passage("d1#px"), DataError);
  CHECK_THROWS_AS(parent_of_passage("d1#p"), DataError);
}

TEST_CASE("search_maxp takes the max passage score per parent") {
  DenseIndex idx;
  idx.ids = {"a#p0", "a#p1", "b#p0"};
  for (std::size_t i = 0; i < idx.ids.size(); ++i) idx.row_of[idx.ids[i]] = i;
  idx.emb.resize(3, 1);
  idx.emb << 0.1f, 0.9f, 0.5f;
  Embedding q(1);
  q << 1.0;
  auto top = search_maxp(idx, q, 2, SimKind::kDot);
  REQUIRE(top.size() == 2);
  CHECK(top[0].id == "a");
  CHECK(top[0].score == doctest::Approx(0.9));
  CHECK(top[1].id == "b");
  CHECK(top[1].score == doctest::Approx(0.5));
}

TEST_CASE("search_maxp with one passage per parent reduces to exact search") {
  Corpus c;
  for (int i = 0; i < 6; ++i)
    c.add(Document{"d" + std::to_string(i), "tok" + std::to_string(i) + " filler", ""});
  auto parts = split_corpus(c, PassageOptions{8, 8, 4});
  auto p = init_params(512, 4, 3, true);
  auto idx = encode_corpus(p, parts);
  Rng rng(5);
  Embedding q(4);
  for (int j = 0; j < 4; ++j) q[j] = rng.unit() - 0.5;
  auto maxp = search_maxp(idx, q, 6, SimKind::kDot);
  auto exact = search_exact(idx, q, 6, SimKind::kDot);
  REQUIRE(maxp.size() == exact.size());
  for (std::size_t i = 0; i < maxp.size(); ++i) {
    CHECK(maxp[i].id == parent_of_passage(exact[i].id));
    CHECK(maxp[i].score == doctest::Approx(exact[i].score).epsilon(1e-12));
  }
}

TEST_CASE("search_maxp matches a brute-force grouping on random passage sets") {
  Rng rng(31);
  DenseIndex idx;
  int row = 0;
  for (int parent = 0; parent < 8; ++parent) {
    int n_p = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < n_p; ++k) {
      idx.ids.push_back("doc" + std::to_string(parent) + "#p" + std::to_string(k));
      idx.row_of[idx.ids.back()] = static_cast<std::size_t>(row++);
    }
  }
  idx.emb.resize(row, 3);
  for (Eigen::Index i = 0; i < idx.emb.rows(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      idx.emb(i, j) = static_cast<float>(rng.unit() - 0.5);

  Embedding q(3);
  for (int j = 0; j < 3; ++j) q[j] = rng.unit() - 0.5;

  std::map<std::string, double> best;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    double s = score(q, idx.row(i), SimKind::kDot);
    auto parent = parent_of_passage(idx.ids[i]);
    auto it = best.find(parent);
    if (it == best.end() || s > it->second) best[parent] = s;
  }
  std::vector<ScoredDoc> want(best.size());
  std::transform(best.begin(), best.end(), want.begin(),
                 [](const auto& kv) { return ScoredDoc{kv.first, kv.second}; });
  std::sort(want.begin(), want.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });

  auto got = search_maxp(idx, q, static_cast<int>(best.size()), SimKind::kDot);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].id == want[i].id);
    CHECK(got[i].score == doctest::Approx(want[i].score).epsilon(1e-12));
  }
}

TEST_CASE("search_maxp requires passage ids") {
  auto idx = make_index({{1, 0}});  // ids "d0" carry no passage marker
  Embedding q(2);
  q << 1, 0;
  CHECK_THROWS_AS(search_maxp(idx, q, 1, SimKind::kDot), DataError);
}

TEST_CASE("dense index save/load round trip") {
  TempDir tmp("dense_rt");
  auto idx = random_index(19, 12, 4);
  idx.version = 321;
  save_dense_index(idx, tmp.file("i.ancx"));
  auto back = load_dense_index(tmp.file("i.ancx"));
  CHECK(back.version == 321);
  CHECK(back.ids == idx.ids);
  CHECK(back.row_of == idx.row_of);
  REQUIRE(back.emb.rows() == idx.emb.rows());
  CHECK((back.emb - idx.emb).cwiseAbs().maxCoeff() == 0.0f);
  CHECK_FALSE(back.ivf.has_value());
}

TEST_CASE("dense index round trip preserves the ivf block") {
  TempDir tmp("dense_ivf_rt");
  auto idx = random_index(20, 18, 3);
  build_ivf(idx, 3, 6, 2);
  save_dense_index(idx, tmp.file("i.ancx"));
  auto back = load_dense_index(tmp.file("i.ancx"));
  REQUIRE(back.ivf.has_value());
  CHECK(back.ivf->nlist == 3);
  CHECK((back.ivf->centroids - idx.ivf->centroids).cwiseAbs().maxCoeff() == 0.0f);
  for (std::size_t l = 0; l < 3; ++l) CHECK(back.ivf->lists[l] == idx.ivf->lists[l]);
}

TEST_CASE("dense index load rejects corrupt files") {
  TempDir tmp("dense_bad");
  auto idx = random_index(21, 6, 3);
  save_dense_index(idx, tmp.file("i.ancx"));
  {
    std::ifstream is(tmp.file("i.ancx"), std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)), {});
    std::ofstream os(tmp.file("trunc.ancx"), std::ios::binary);
    os.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS_AS(load_dense_index(tmp.file("trunc.ancx")), DataError);
  {
    std::ofstream os(tmp.file("magic.ancx"), std::ios::binary);
    os << "BAD!" << std::string(40, '\0');
  }
  CHECK_THROWS_AS(load_dense_index(tmp.file("magic.ancx")), DataError);
}

}  // TEST_SUITE
