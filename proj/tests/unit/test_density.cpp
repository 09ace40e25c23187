#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "test_util.hpp"
#include "topicscope/density.hpp"

using namespace topicscope;
using namespace topicscope::density;

namespace {

Matrix column(const std::vector<double>& v) {
  Matrix m(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
  return m;
}

Matrix random_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, dim);
  for (auto& v : m.values()) v = rng.uniform(0.0, 1.0);
  return m;
}

// Kruskal with union-find over all pairs.
double kruskal_total(const Matrix& w) {
  const std::size_t n = w.rows();
  std::vector<std::tuple<double, std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) edges.emplace_back(w(i, j), i, j);
  }
  std::sort(edges.begin(), edges.end());
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t a) {
    return parent[a] == a ? a : parent[a] = find(parent[a]);
  };
  double total = 0.0;
  for (const auto& [wt, a, b] : edges) {
    const auto ra = find(a), rb = find(b);
    if (ra != rb) {
      parent[ra] = rb;
      total += wt;
    }
  }
  return total;
}

// Same partition up to renaming, noise kept as noise.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, back;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    if (fwd.count(a[i]) && fwd[a[i]] != b[i]) return false;
    if (back.count(b[i]) && back[b[i]] != a[i]) return false;
    fwd[a[i]] = b[i];
    back[b[i]] = a[i];
  }
  return true;
}

CondensedTree nested_tree(double leaf_fall_lambda) {
  // root 12 -> A 13 (8 points), B 14 (4 points) at lambda 1;
  // A -> A1 15 (points 0-3), A2 16 (points 4-7) at lambda 2
  CondensedTree t;
  t.n_points = 12;
  t.rows.push_back({12, 13, 1.0, 8});
  t.rows.push_back({12, 14, 1.0, 4});
  t.rows.push_back({13, 15, 2.0, 4});
  t.rows.push_back({13, 16, 2.0, 4});
  for (std::size_t p = 0; p < 4; ++p) t.rows.push_back({15, p, leaf_fall_lambda, 1});
  for (std::size_t p = 4; p < 8; ++p) t.rows.push_back({16, p, leaf_fall_lambda, 1});
  for (std::size_t p = 8; p < 12; ++p) t.rows.push_back({14, p, 3.0, 1});
  return t;
}

}  // namespace

TEST(CoreDistances, NearestNeighbour) {
  EXPECT_EQ(core_distances(column({0, 1, 3}), 1), (std::vector<double>{1, 1, 2}));
  EXPECT_EQ(core_distances(column({5, 5, 9}), 1)[0], 0.0);
}

TEST(CoreDistances, MatchesSortOracle) {
  const auto x = random_points(30, 3, 1);
  const auto core = core_distances(x, 4);
  for (std::size_t i = 0; i < 30; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < 30; ++j) {
      if (j != i) d.push_back(euclidean(x.row(i), x.row(j)));
    }
    std::sort(d.begin(), d.end());
    EXPECT_DOUBLE_EQ(core[i], d[3]);
  }
}

TEST(MutualReachability, MaxOfThree) {
  EXPECT_EQ(mutual_reachability(1.0, 0.5, 0.2), 1.0);
  EXPECT_EQ(mutual_reachability(0.1, 0.5, 0.2), 0.5);
  EXPECT_EQ(mutual_reachability(0.1, 0.2, 0.5), mutual_reachability(0.1, 0.5, 0.2));
}

TEST(Mst, UniqueTree) {
  Matrix w(3, 3);
  w(0, 1) = w(1, 0) = 1;
  w(1, 2) = w(2, 1) = 2;
  w(0, 2) = w(2, 0) = 3;
  EXPECT_EQ(mst(w), (std::vector<MstEdge>{{0, 1, 1.0}, {1, 2, 2.0}}));
}

TEST(Mst, TieTakesLowerIndexPair) {
  Matrix w(3, 3, 1.0);
  const auto t = mst(w);
  EXPECT_EQ(t, (std::vector<MstEdge>{{0, 1, 1.0}, {0, 2, 1.0}}));
}

TEST(Mst, TotalWeightMatchesKruskal) {
  const auto x = random_points(20, 2, 2);
  const auto w = pairwise_distances(x);
  const auto t = mst(w);
  ASSERT_EQ(t.size(), 19u);
  double total = 0.0;
  for (const auto& e : t) total += e.weight;
  EXPECT_NEAR(total, kruskal_total(w), 1e-12);
}

TEST(Mst, MutualReachabilityVariantAgrees) {
  const auto x = random_points(25, 3, 3);
  const auto core = core_distances(x, 3);
  Matrix w(25, 25);
  for (std::size_t i = 0; i < 25; ++i) {
    for (std::size_t j = 0; j < 25; ++j) w(i, j) = mutual_reachability(euclidean(x.row(i), x.row(j)), core[i], core[j]);
  }
  const auto a = mst(w);
  const auto b = mutual_reachability_mst(x, core);
  double ta = 0, tb = 0;
  for (const auto& e : a) ta += e.weight;
  for (const auto& e : b) tb += e.weight;
  EXPECT_NEAR(ta, tb, 1e-12);
}

TEST(Condense, TwoFarBlobsTwoLeaves) {
  const auto x = column({0, 0.1, 0.2, 0.3, 0.4, 100, 100.1, 100.2, 100.3, 100.4});
  const auto core = core_distances(x, 1);
  const auto tree = condense(build_hierarchy(mutual_reachability_mst(x, core), 10), 10, 3);
  std::set<std::size_t> clusters, parents;
  for (const auto& r : tree.rows) {
    if (tree.is_cluster(r.child)) {
      clusters.insert(r.child);
      parents.insert(r.parent);
    }
  }
  std::size_t leaves = 0;
  for (const auto c : clusters) leaves += parents.count(c) ? 0 : 1;
  EXPECT_EQ(leaves, 2u);
}

TEST(Condense, OversizedMinimumLeavesOnlyRoot) {
  const auto x = random_points(8, 2, 4);
  const auto tree = condense(build_hierarchy(mutual_reachability_mst(x, core_distances(x, 2)), 8), 8, 9);
  for (const auto& r : tree.rows) {
    EXPECT_EQ(r.parent, tree.root());
    EXPECT_FALSE(tree.is_cluster(r.child));
  }
  EXPECT_EQ(tree.rows.size(), 8u);
}

TEST(Condense, EquallySpacedChainDoesNotSplit) {
  std::vector<double> v;
  for (int i = 0; i < 20; ++i) v.push_back(i);
  const auto x = column(v);
  const auto tree = condense(build_hierarchy(mutual_reachability_mst(x, core_distances(x, 2)), 20), 20, 3);
  for (const auto& r : tree.rows) EXPECT_FALSE(tree.is_cluster(r.child));
}

TEST(Extract, ParentBeatsChildrenUnderEom) {
  // A: (2-1)*4*2 = 8; A1, A2: (2.5-2)*4 = 2 each
  const auto tree = nested_tree(2.5);
  const auto eom = extract(tree, SelectionMethod::eom);
  EXPECT_EQ(eom.condensed_clusters, (std::vector<std::size_t>{13, 14}));
  for (int p = 0; p < 8; ++p) EXPECT_EQ(eom.labels[p], 0);
  for (int p = 8; p < 12; ++p) EXPECT_EQ(eom.labels[p], 1);
  const auto leaf = extract(tree, SelectionMethod::leaf);
  EXPECT_EQ(leaf.condensed_clusters, (std::vector<std::size_t>{14, 15, 16}));
  EXPECT_EQ(leaf.labels[0], 1);
  EXPECT_EQ(leaf.labels[4], 2);
  EXPECT_EQ(leaf.labels[8], 0);
}

TEST(Extract, StableLeavesWinUnderEom) {
  // A1, A2 stability (3.25-2)*4 = 5 each, above A's 8 in sum
  const auto tree = nested_tree(3.25);
  const auto stab = cluster_stabilities(tree);
  std::map<std::size_t, double> s(stab.begin(), stab.end());
  EXPECT_DOUBLE_EQ(s.at(13), 8.0);
  EXPECT_DOUBLE_EQ(s.at(15), 5.0);
  const auto eom = extract(tree, SelectionMethod::eom);
  EXPECT_EQ(eom.condensed_clusters, (std::vector<std::size_t>{14, 15, 16}));
  EXPECT_EQ(eom.labels, extract(tree, SelectionMethod::leaf).labels);
}

TEST(Fit, ClustersRespectMinimumSize) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto blobs = test::make_blobs({30, 25, 40, 12}, 3, 0.6, 8.0, seed);
    ClusterConfig c;
    c.min_samples = 5;
    c.min_cluster_size = 15;
    for (const auto method : {SelectionMethod::eom, SelectionMethod::leaf}) {
      c.cluster_selection_method = method;
      const auto [labels, fitted] = fit(blobs.points, c);
      std::map<int, std::size_t> sizes;
      for (const int l : labels) {
        if (l >= 0) ++sizes[l];
      }
      for (const auto& [l, s] : sizes) EXPECT_GE(s, 15u);
      // labels are numbered by size descending
      for (int l = 1; l < static_cast<int>(sizes.size()); ++l) EXPECT_GE(sizes[l - 1], sizes[l]);
    }
  }
}

TEST(Fit, PermutationInvariantUpToRelabeling) {
  const auto blobs = test::make_blobs({40, 30, 20}, 2, 0.5, 6.0, 11);
  ClusterConfig c;
  c.min_samples = 4;
  c.min_cluster_size = 10;
  const auto base = fit(blobs.points, c).first;
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(blobs.points.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    const auto permuted = fit(blobs.points.select_rows(perm), c).first;
    std::vector<int> back(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) back[perm[i]] = permuted[i];
    EXPECT_TRUE(same_partition(base, back));
  }
}

TEST(ApproximateAssign, ExemplarAndFarPoint) {
  const auto blobs = test::make_blobs({50, 50}, 2, 0.5, 10.0, 12);
  ClusterConfig c;
  c.min_samples = 5;
  c.min_cluster_size = 10;
  const auto fitted = fit(blobs.points, c).second;
  ASSERT_GT(fitted.exemplars.rows(), 0u);
  Matrix y(2, 2);
  std::copy(fitted.exemplars.row(0).begin(), fitted.exemplars.row(0).end(), y.row(0).begin());
  y(1, 0) = y(1, 1) = 10 * 40.0;  // far beyond the dataset diameter
  const auto a = approximate_assign(fitted, y);
  EXPECT_EQ(a[0], fitted.exemplar_labels[0]);
  EXPECT_EQ(a[1], kNoise);
}

TEST(ApproximateAssign, HeldOutBlobSamples) {
  auto blobs = test::make_blobs({100, 100, 100, 100, 100}, 4, 0.6, 10.0, 13);
  ClusterConfig c;
  c.min_samples = 5;
  c.min_cluster_size = 20;
  const auto [labels, fitted] = fit(blobs.points, c);
  // map each true blob to its majority fitted label
  std::map<int, std::map<int, int>> votes;
  for (std::size_t i = 0; i < labels.size(); ++i) ++votes[blobs.labels[i]][labels[i]];
  std::map<int, int> to_fit;
  for (auto& [truth, v] : votes) {
    to_fit[truth] = std::max_element(v.begin(), v.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
  }
  Rng rng(99);
  Matrix held(250, 4);
  std::vector<int> truth;
  for (std::size_t i = 0; i < 250; ++i) {
    const int b = static_cast<int>(i % 5);
    for (std::size_t d = 0; d < 4; ++d) held(i, d) = blobs.centers(b, d) + 0.6 * rng.normal();
    truth.push_back(b);
  }
  const auto a = approximate_assign(fitted, held);
  std::size_t right = 0;
  for (std::size_t i = 0; i < 250; ++i) right += a[i] == to_fit[truth[i]] && a[i] >= 0;
  EXPECT_GE(static_cast<double>(right) / 250.0, 0.9);
}
