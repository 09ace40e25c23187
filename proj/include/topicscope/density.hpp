#pragma once

// Hierarchical density clustering: core distances, mutual reachability,
// minimum spanning tree, single-linkage hierarchy, condensed tree, flat
// cluster extraction, and out-of-sample assignment.

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"

namespace topicscope::density {

enum class SelectionMethod { eom, leaf };

SelectionMethod selection_method_from_string(const std::string& s);
std::string to_string(SelectionMethod m);

struct ClusterConfig {
  std::size_t min_samples = 5;
  std::size_t min_cluster_size = 5;
  SelectionMethod cluster_selection_method = SelectionMethod::eom;
  std::string metric = "euclidean";

  void validate() const;
  bool operator==(const ClusterConfig&) const = default;
};

nlohmann::json to_json(const ClusterConfig& c);
ClusterConfig cluster_config_from_json(const nlohmann::json& j);

inline constexpr int kNoise = -1;

/// Distance to the min_samples-th nearest other point.
std::vector<double> core_distances(const Matrix& x, std::size_t min_samples);

double mutual_reachability(double distance, double core_i, double core_j);

struct MstEdge {
  std::size_t a;  // a < b
  std::size_t b;
  double weight;
  bool operator==(const MstEdge&) const = default;
};

/// Minimum spanning tree of a dense symmetric weight matrix. Edges are ordered
/// by (weight, smaller endpoint, larger endpoint), which also breaks ties.
std::vector<MstEdge> mst(const Matrix& weights);
/// Same tree over mutual reachability, computed without materialising the matrix.
std::vector<MstEdge> mutual_reachability_mst(const Matrix& x, const std::vector<double>& core);

/// Single-linkage merge node; ids below n are points, n + i is the i-th merge.
struct DendrogramNode {
  std::size_t left;
  std::size_t right;
  double distance;
  std::size_t size;
};

std::vector<DendrogramNode> build_hierarchy(const std::vector<MstEdge>& tree, std::size_t n_points);

struct CondensedRow {
  std::size_t parent;  // cluster id (>= n_points)
  std::size_t child;   // point id (< n_points) or cluster id
  double lambda;
  std::size_t child_size;
};

struct CondensedTree {
  std::size_t n_points = 0;
  std::vector<CondensedRow> rows;

  std::size_t root() const { return n_points; }
  bool is_cluster(std::size_t id) const { return id >= n_points; }
};

/// Splits count only when at least two sides reach min_cluster_size; smaller
/// sides fall out of the parent at the split's lambda. Merges at the same
/// distance are treated as one multi-way split, and a zero-distance merge
/// (identical points) never spawns clusters.
CondensedTree condense(const std::vector<DendrogramNode>& dendrogram, std::size_t n_points,
                       std::size_t min_cluster_size);

/// Per-cluster stability: sum over rows of (lambda - lambda_birth) * child_size.
std::vector<std::pair<std::size_t, double>> cluster_stabilities(const CondensedTree& tree);

struct Extraction {
  std::vector<int> labels;                     // per point, -1 = noise
  std::vector<double> stability;               // per label
  std::vector<std::size_t> condensed_clusters;  // condensed-tree id per label
};

/// Selects flat clusters (the root is never selected) and relabels them by
/// size descending, ties by condensed-tree id.
Extraction extract(const CondensedTree& tree, SelectionMethod method);

struct FittedClusterer {
  ClusterConfig config;
  std::size_t dim = 0;
  Matrix exemplars;
  std::vector<int> exemplar_labels;
  /// Lambda at which each cluster merges into its parent, per label; the
  /// assignment radius is 1 / death_lambda.
  std::vector<double> death_lambda;
  std::vector<double> stability;
  std::vector<int> labels;
  std::size_t n_clusters() const { return death_lambda.size(); }
};

std::pair<std::vector<int>, FittedClusterer> fit(const Matrix& x, const ClusterConfig& config);

/// Nearest exemplar's label when within that cluster's death distance, else -1.
std::vector<int> approximate_assign(const FittedClusterer& fitted, const Matrix& y);

}  // namespace topicscope::density
