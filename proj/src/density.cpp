#include "topicscope/density.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <tuple>

namespace topicscope::density {

using nlohmann::json;

SelectionMethod selection_method_from_string(const std::string& s) {
  if (s == "eom") return SelectionMethod::eom;
  if (s == "leaf") return SelectionMethod::leaf;
  throw InvalidArgument("unknown cluster selection method: " + s);
}

std::string to_string(SelectionMethod m) { return m == SelectionMethod::eom ? "eom" : "leaf"; }

void ClusterConfig::validate() const {
  if (min_samples < 1) throw InvalidArgument("min_samples must be >= 1");
  if (min_cluster_size < 2) throw InvalidArgument("min_cluster_size must be >= 2");
  if (metric != "euclidean") throw InvalidArgument("unsupported metric: " + metric);
}

json to_json(const ClusterConfig& c) {
  return {{"min_samples", c.min_samples},
          {"min_cluster_size", c.min_cluster_size},
          {"cluster_selection_method", to_string(c.cluster_selection_method)},
          {"metric", c.metric}};
}

ClusterConfig cluster_config_from_json(const json& j) {
  ClusterConfig c;
  c.min_samples = j.value("min_samples", c.min_samples);
  c.min_cluster_size = j.value("min_cluster_size", c.min_cluster_size);
  c.cluster_selection_method = selection_method_from_string(j.value("cluster_selection_method", "eom"));
  c.metric = j.value("metric", c.metric);
  return c;
}

std::vector<double> core_distances(const Matrix& x, std::size_t min_samples) {
  const std::size_t n = x.rows();
  if (min_samples < 1) throw InvalidArgument("min_samples must be >= 1");
  if (min_samples >= n) {
    throw InvalidArgument("min_samples = " + std::to_string(min_samples) + " needs more than " +
                          std::to_string(n) + " points");
  }
  std::vector<double> core(n);
  std::vector<double> row(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row[m++] = euclidean(x.row(i), x.row(j));
    }
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(min_samples - 1), row.end());
    core[i] = row[min_samples - 1];
  }
  return core;
}

double mutual_reachability(double distance, double core_i, double core_j) {
  return std::max({distance, core_i, core_j});
}

namespace {

using EdgeKey = std::tuple<double, std::size_t, std::size_t>;

EdgeKey key(double w, std::size_t u, std::size_t v) { return {w, std::min(u, v), std::max(u, v)}; }

template <typename WeightFn>
std::vector<MstEdge> prim(std::size_t n, WeightFn&& weight) {
  if (n < 2) throw InvalidArgument("a spanning tree needs at least two points");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<bool> in_tree(n, false);
  std::vector<EdgeKey> best(n, EdgeKey{kInf, n, n});
  std::vector<MstEdge> edges;
  edges.reserve(n - 1);
  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const EdgeKey candidate = key(weight(current, v), current, v);
      if (candidate < best[v]) best[v] = candidate;
      if (next == n || best[v] < best[next]) next = v;
    }
    const auto& [w, a, b] = best[next];
    edges.push_back({a, b, w});
    in_tree[next] = true;
    current = next;
  }
  std::sort(edges.begin(), edges.end(), [](const MstEdge& l, const MstEdge& r) {
    return std::tie(l.weight, l.a, l.b) < std::tie(r.weight, r.a, r.b);
  });
  return edges;
}

}  // namespace

std::vector<MstEdge> mst(const Matrix& weights) {
  if (weights.rows() != weights.cols()) throw InvalidArgument("weight matrix must be square");
  return prim(weights.rows(), [&](std::size_t i, std::size_t j) { return weights(i, j); });
}

std::vector<MstEdge> mutual_reachability_mst(const Matrix& x, const std::vector<double>& core) {
  return prim(x.rows(), [&](std::size_t i, std::size_t j) {
    return mutual_reachability(euclidean(x.row(i), x.row(j)), core[i], core[j]);
  });
}

std::vector<DendrogramNode> build_hierarchy(const std::vector<MstEdge>& tree, std::size_t n) {
  if (tree.size() + 1 != n) throw InvalidArgument("spanning tree must have n - 1 edges");
  std::vector<MstEdge> sorted = tree;
  std::stable_sort(sorted.begin(), sorted.end(), [](const MstEdge& l, const MstEdge& r) {
    return std::tie(l.weight, l.a, l.b) < std::tie(r.weight, r.a, r.b);
  });
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::size_t> size(2 * n - 1, 1);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  std::vector<DendrogramNode> nodes;
  nodes.reserve(n - 1);
  for (const auto& e : sorted) {
    const std::size_t ra = find(e.a), rb = find(e.b);
    if (ra == rb) throw InvalidArgument("edge list contains a cycle");
    const std::size_t id = n + nodes.size();
    nodes.push_back({std::min(ra, rb), std::max(ra, rb), e.weight, size[ra] + size[rb]});
    parent[ra] = parent[rb] = id;
    size[id] = size[ra] + size[rb];
  }
  return nodes;
}

namespace {

constexpr double kDistanceFloor = 1e-12;

double lambda_of(double distance) { return 1.0 / std::max(distance, kDistanceFloor); }

}  // namespace

CondensedTree condense(const std::vector<DendrogramNode>& dendrogram, std::size_t n,
                       std::size_t min_cluster_size) {
  CondensedTree tree;
  tree.n_points = n;
  if (n == 0) return tree;
  if (n == 1) return tree;
  auto size_of = [&](std::size_t id) { return id < n ? std::size_t{1} : dendrogram[id - n].size; };
  auto fall_out = [&](std::size_t from, std::size_t label, double lambda) {
    std::vector<std::size_t> stack{from};
    while (!stack.empty()) {
      const std::size_t id = stack.back();
      stack.pop_back();
      if (id < n) {
        tree.rows.push_back({label, id, lambda, 1});
      } else {
        stack.push_back(dendrogram[id - n].right);
        stack.push_back(dendrogram[id - n].left);
      }
    }
  };

  std::size_t next_label = n + 1;
  std::deque<std::pair<std::size_t, std::size_t>> queue{{n + dendrogram.size() - 1, n}};
  while (!queue.empty()) {
    const auto [node, label] = queue.front();
    queue.pop_front();
    const auto& info = dendrogram[node - n];
    const double lambda = lambda_of(info.distance);
    if (info.distance <= 0.0) {
      fall_out(node, label, lambda);
      continue;
    }
    // Children merged at this same distance belong to one multi-way split.
    std::vector<std::size_t> components;
    std::vector<std::size_t> stack{info.right, info.left};
    while (!stack.empty()) {
      const std::size_t id = stack.back();
      stack.pop_back();
      if (id >= n && dendrogram[id - n].distance == info.distance) {
        stack.push_back(dendrogram[id - n].right);
        stack.push_back(dendrogram[id - n].left);
      } else {
        components.push_back(id);
      }
    }
    std::vector<std::size_t> big;
    for (const auto c : components) {
      if (size_of(c) >= min_cluster_size) big.push_back(c);
    }
    for (const auto c : components) {
      if (size_of(c) < min_cluster_size) fall_out(c, label, lambda);
    }
    if (big.size() >= 2) {
      for (const auto c : big) {
        const std::size_t child_label = next_label++;
        tree.rows.push_back({label, child_label, lambda, size_of(c)});
        queue.emplace_back(c, child_label);
      }
    } else if (big.size() == 1) {
      queue.emplace_back(big.front(), label);
    }
  }
  return tree;
}

std::vector<std::pair<std::size_t, double>> cluster_stabilities(const CondensedTree& tree) {
  std::map<std::size_t, double> birth;
  std::map<std::size_t, double> stability;
  birth[tree.root()] = 0.0;
  stability[tree.root()] = 0.0;
  for (const auto& r : tree.rows) {
    if (tree.is_cluster(r.child)) {
      birth[r.child] = r.lambda;
      stability.emplace(r.child, 0.0);
    }
  }
  for (const auto& r : tree.rows) {
    stability[r.parent] += (r.lambda - birth.at(r.parent)) * static_cast<double>(r.child_size);
  }
  return {stability.begin(), stability.end()};
}

Extraction extract(const CondensedTree& tree, SelectionMethod method) {
  const std::size_t n = tree.n_points;
  const auto stab_list = cluster_stabilities(tree);
  std::map<std::size_t, double> stability(stab_list.begin(), stab_list.end());
  const std::map<std::size_t, double> original = stability;

  std::map<std::size_t, std::vector<std::size_t>> children;
  std::map<std::size_t, std::size_t> parent;
  for (const auto& r : tree.rows) {
    parent[r.child] = r.parent;
    if (tree.is_cluster(r.child)) children[r.parent].push_back(r.child);
  }

  std::map<std::size_t, bool> selected;
  for (const auto& [c, s] : stability) selected[c] = c != tree.root();

  auto descendants = [&](std::size_t c) {
    std::vector<std::size_t> out;
    std::vector<std::size_t> stack{c};
    while (!stack.empty()) {
      const std::size_t id = stack.back();
      stack.pop_back();
      if (auto it = children.find(id); it != children.end()) {
        for (const auto ch : it->second) {
          out.push_back(ch);
          stack.push_back(ch);
        }
      }
    }
    return out;
  };

  if (method == SelectionMethod::eom) {
    for (auto it = stability.rbegin(); it != stability.rend(); ++it) {
      const std::size_t c = it->first;
      if (c == tree.root()) continue;
      double subtree = 0.0;
      if (auto ch = children.find(c); ch != children.end()) {
        for (const auto child : ch->second) subtree += stability[child];
      }
      if (subtree > stability[c]) {
        selected[c] = false;
        stability[c] = subtree;
      } else {
        for (const auto d : descendants(c)) selected[d] = false;
      }
    }
  } else {
    for (auto& [c, sel] : selected) sel = c != tree.root() && !children.count(c);
  }

  std::vector<std::size_t> chosen;
  for (const auto& [c, sel] : selected) {
    if (sel) chosen.push_back(c);
  }

  std::vector<int> raw(n, kNoise);
  std::map<std::size_t, int> index_of;
  for (std::size_t i = 0; i < chosen.size(); ++i) index_of[chosen[i]] = static_cast<int>(i);
  std::vector<std::size_t> counts(chosen.size(), 0);
  for (std::size_t p = 0; p < n; ++p) {
    auto it = parent.find(p);
    if (it == parent.end()) continue;
    std::size_t c = it->second;
    while (true) {
      if (auto sel = index_of.find(c); sel != index_of.end()) {
        raw[p] = sel->second;
        ++counts[static_cast<std::size_t>(sel->second)];
        break;
      }
      auto up = parent.find(c);
      if (up == parent.end()) break;
      c = up->second;
    }
  }

  std::vector<std::size_t> order(chosen.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return counts[l] > counts[r]; });
  std::vector<int> relabel(chosen.size());
  Extraction ex;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    relabel[order[rank]] = static_cast<int>(rank);
    ex.stability.push_back(original.at(chosen[order[rank]]));
    ex.condensed_clusters.push_back(chosen[order[rank]]);
  }
  ex.labels.resize(n);
  for (std::size_t p = 0; p < n; ++p) ex.labels[p] = raw[p] == kNoise ? kNoise : relabel[static_cast<std::size_t>(raw[p])];
  return ex;
}

std::pair<std::vector<int>, FittedClusterer> fit(const Matrix& x, const ClusterConfig& config) {
  config.validate();
  const std::size_t n = x.rows();
  if (n < 2) throw InvalidArgument("clustering needs at least two points");
  const auto core = core_distances(x, config.min_samples);
  const auto tree_edges = mutual_reachability_mst(x, core);
  const auto dendrogram = build_hierarchy(tree_edges, n);
  const CondensedTree tree = condense(dendrogram, n, config.min_cluster_size);
  Extraction ex = extract(tree, config.cluster_selection_method);

  FittedClusterer fitted;
  fitted.config = config;
  fitted.dim = x.cols();
  fitted.labels = ex.labels;
  fitted.stability = ex.stability;
  const std::size_t k = ex.condensed_clusters.size();

  std::map<std::size_t, double> birth;
  std::vector<double> point_lambda(n, 0.0);
  for (const auto& r : tree.rows) {
    if (tree.is_cluster(r.child)) {
      birth[r.child] = r.lambda;
    } else {
      point_lambda[r.child] = r.lambda;
    }
  }
  std::vector<double> max_lambda(k, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    if (ex.labels[p] != kNoise) {
      auto& m = max_lambda[static_cast<std::size_t>(ex.labels[p])];
      m = std::max(m, point_lambda[p]);
    }
  }
  std::vector<std::size_t> exemplar_rows;
  for (std::size_t p = 0; p < n; ++p) {
    const int l = ex.labels[p];
    if (l != kNoise && point_lambda[p] == max_lambda[static_cast<std::size_t>(l)]) {
      exemplar_rows.push_back(p);
      fitted.exemplar_labels.push_back(l);
    }
  }
  fitted.exemplars = x.select_rows(exemplar_rows);
  fitted.death_lambda.resize(k);
  for (std::size_t l = 0; l < k; ++l) fitted.death_lambda[l] = birth.at(ex.condensed_clusters[l]);
  return {ex.labels, std::move(fitted)};
}

std::vector<int> approximate_assign(const FittedClusterer& fitted, const Matrix& y) {
  if (y.cols() != fitted.dim) {
    throw InvalidArgument("assignment input has dimension " + std::to_string(y.cols()) + ", expected " +
                          std::to_string(fitted.dim));
  }
  std::vector<int> out(y.rows(), kNoise);
  if (fitted.exemplars.rows() == 0) return out;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < fitted.exemplars.rows(); ++e) {
      const double d = euclidean(y.row(r), fitted.exemplars.row(e));
      if (d < best_d) {
        best_d = d;
        best = e;
      }
    }
    const int label = fitted.exemplar_labels[best];
    if (best_d <= 1.0 / fitted.death_lambda[static_cast<std::size_t>(label)]) out[r] = label;
  }
  return out;
}

}  // namespace topicscope::density
