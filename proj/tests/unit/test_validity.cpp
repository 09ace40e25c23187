#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dbcv_oracle.hpp"
#include "test_util.hpp"
#include "topicscope/validity.hpp"

using namespace topicscope;
using namespace topicscope::validity;

namespace {

Matrix rows(const std::vector<std::vector<double>>& r) { return test::to_matrix(r); }

}  // namespace

TEST(AllPointsCore, TwoPoints) {
  EXPECT_DOUBLE_EQ(allpoints_core_distance(0, rows({{0}, {2}}), 1), 2.0);
}

TEST(AllPointsCore, EquidistantTriangle) {
  const double h = std::sqrt(3.0) / 2.0;
  const auto c = rows({{0, 0}, {1, 0}, {0.5, h}});
  for (const std::size_t dim : {1, 2, 7}) EXPECT_NEAR(allpoints_core_distance(1, c, dim), 1.0, 1e-12);
}

TEST(AllPointsCore, MatchesFormula) {
  Rng rng(3);
  test::Points p(6, std::vector<double>(2));
  for (auto& q : p) {
    for (auto& v : q) v = rng.uniform(0, 1);
  }
  for (std::size_t i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      if (j != i) sum += std::pow(1.0 / test::oracle_dist(p[i], p[j]), 2.0);
    }
    EXPECT_NEAR(allpoints_core_distance(i, test::to_matrix(p), 2), std::pow(sum / 5.0, -0.5), 1e-12);
  }
}

TEST(Sparseness, TwoPointFallback) {
  // core distances are both 3, the single edge has mreach 3
  EXPECT_DOUBLE_EQ(density_sparseness(rows({{0}, {3}}), 1), 3.0);
}

TEST(Sparseness, CollinearMiddleEdge) {
  const auto c = rows({{0}, {1}, {2}, {3}});
  // internal nodes are 1 and 2; the middle edge's weight is max(1, core1, core2)
  const double core1 = allpoints_core_distance(1, c, 1);
  const double core2 = allpoints_core_distance(2, c, 1);
  EXPECT_DOUBLE_EQ(density_sparseness(c, 1), std::max({1.0, core1, core2}));
}

TEST(Sparseness, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    test::Points p(8, std::vector<double>(3));
    for (auto& q : p) {
      for (auto& v : q) v = rng.uniform(0, 1);
    }
    EXPECT_NEAR(density_sparseness(test::to_matrix(p), 3), test::oracle_cluster(p, 3).dsc, 1e-12);
  }
}

TEST(Separation, TwoPointClustersUseAllPairs) {
  const auto a = rows({{0}, {1}});
  const auto b = rows({{5}, {7}});
  // cores: 1 in a, 2 in b; closest pair (1, 5) gives max(4, 1, 2)
  EXPECT_DOUBLE_EQ(density_separation(a, b, 1), 4.0);
  EXPECT_DOUBLE_EQ(density_separation(b, a, 1), 4.0);
}

TEST(Separation, FarBlobsExceedSparseness) {
  const auto blobs = test::make_blobs({10, 10}, 2, 0.1, 1.0, 1);
  Matrix a(10, 2), b(10, 2);
  for (std::size_t i = 0; i < 10; ++i) {
    a(i, 0) = blobs.points(i, 0);
    a(i, 1) = blobs.points(i, 1);
    b(i, 0) = blobs.points(10 + i, 0) + 20.0;
    b(i, 1) = blobs.points(10 + i, 1);
  }
  const double sep = density_separation(a, b, 2);
  EXPECT_GT(sep, density_sparseness(a, 2));
  EXPECT_GT(sep, density_sparseness(b, 2));
  EXPECT_DOUBLE_EQ(sep, density_separation(b, a, 2));
  EXPECT_GT(sep, 15.0);
}

TEST(Dbcv, TightFarBlobsScoreHigh) {
  auto blobs = test::make_blobs({15, 15}, 2, 0.02, 0.0, 2);
  for (std::size_t i = 15; i < 30; ++i) blobs.points(i, 0) += 10.0;
  const auto r = dbcv(blobs.points, blobs.labels);
  EXPECT_GT(r.score, 0.9);
  test::Points p;
  for (std::size_t i = 0; i < 30; ++i) p.push_back({blobs.points(i, 0), blobs.points(i, 1)});
  EXPECT_NEAR(r.score, test::oracle_dbcv(p, blobs.labels), 1e-9);
}

TEST(Dbcv, ShuffledLabelsScoreNegative) {
  auto blobs = test::make_blobs({15, 15}, 2, 0.02, 0.0, 2);
  for (std::size_t i = 15; i < 30; ++i) blobs.points(i, 0) += 10.0;
  int negative = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto labels = blobs.labels;
    Rng rng(seed);
    std::shuffle(labels.begin(), labels.end(), rng.engine());
    negative += dbcv(blobs.points, labels).score < 0.0;
  }
  EXPECT_GE(negative, 18);
}

TEST(Dbcv, SingleClusterIsUndefined) {
  const auto x = rows({{0}, {1}, {2}});
  const std::vector<int> one = {0, 0, 0};
  EXPECT_THROW(dbcv(x, one), UndefinedValidity);
}

TEST(Dbcv, SingletonScoredZeroNoiseCounted) {
  const auto x = rows({{0}, {0.1}, {0.2}, {5}, {5.1}, {5.2}, {20}, {40}});
  const std::vector<int> labels = {0, 0, 0, 1, 1, 1, 2, -1};
  const auto r = dbcv(x, labels);
  EXPECT_EQ(r.singleton_clusters, std::vector<int>{2});
  EXPECT_EQ(r.per_cluster_validity.at(2), 0.0);
  EXPECT_EQ(r.n_noise, 1u);
  test::Points p;
  for (std::size_t i = 0; i < 8; ++i) p.push_back({x(i, 0)});
  EXPECT_NEAR(r.score, test::oracle_dbcv(p, labels), 1e-12);
}

TEST(Dbcv, MatchesBruteForceOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto inst = test::random_dbcv_instance(seed);
    const double expected = test::oracle_dbcv(inst.points, inst.labels);
    if (std::isnan(expected)) continue;
    EXPECT_NEAR(dbcv(test::to_matrix(inst.points), inst.labels).score, expected, 1e-9) << "seed " << seed;
  }
}

TEST(Metrics, PerfectPrediction) {
  const std::vector<int> g = {0, 1, 2, 1};
  for (const auto a : {Averaging::micro, Averaging::macro, Averaging::weighted}) {
    const auto m = classification_metrics(g, g, a);
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.f1, 1.0);
  }
}

TEST(Metrics, MicroHandCount) {
  const std::vector<int> gold = {0, 0, 1, 1}, pred = {0, 1, 1, 1};
  const auto m = classification_metrics(pred, gold, Averaging::micro);
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.recall, 0.75);
  EXPECT_DOUBLE_EQ(m.f1, 0.75);
  // macro by hand: class 0 P=1 R=.5, class 1 P=2/3 R=1
  const auto mac = classification_metrics(pred, gold, Averaging::macro);
  EXPECT_DOUBLE_EQ(mac.precision, (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(mac.recall, 0.75);
}

TEST(Metrics, SingleClassMacroEqualsMicro) {
  const std::vector<int> gold = {3, 3, 3}, pred = {3, 3, 3};
  const auto a = classification_metrics(pred, gold, Averaging::macro);
  const auto b = classification_metrics(pred, gold, Averaging::micro);
  EXPECT_EQ(a.f1, b.f1);
  EXPECT_EQ(a.precision, b.precision);
}
