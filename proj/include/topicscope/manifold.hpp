#pragma once

// Uniform manifold approximation and projection: fuzzy k-nearest-neighbour
// graph, stochastic layout optimisation, and out-of-sample projection.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"

namespace topicscope::manifold {

struct ManifoldConfig {
  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  std::size_t n_components = 2;
  std::string metric = "euclidean";
  std::size_t n_epochs = 0;  // 0 = 200 for n <= 10,000 points, else 500
  std::size_t negative_sample_rate = 5;
  double learning_rate = 1.0;
  std::uint64_t seed = 42;

  void validate() const;
  std::size_t epochs_for(std::size_t n_points) const;
  bool operator==(const ManifoldConfig&) const = default;
};

nlohmann::json to_json(const ManifoldConfig& c);
ManifoldConfig manifold_config_from_json(const nlohmann::json& j);

struct KnnGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // n * k, row-major
  std::vector<double> distances;     // n * k, ascending per row

  std::span<const std::size_t> neighbors(std::size_t i) const { return {indices.data() + i * k, k}; }
  std::span<const double> dists(std::size_t i) const { return {distances.data() + i * k, k}; }
};

/// Exact k nearest other points (self excluded), ties broken by lower index.
KnnGraph knn_graph(const Matrix& x, std::size_t k, const std::string& metric = "euclidean");

struct Calibration {
  double rho = 0.0;
  double sigma = 1.0;
};

/// rho is the nearest-neighbour distance; sigma solves
/// sum_j exp(-max(0, d_j - rho) / sigma) = log2(k) by bisection
/// (tolerance 1e-5, at most 64 iterations, floor 1e-12). All-zero input yields (0, 1).
Calibration smooth_knn_calibration(std::span<const double> distances);

/// Probabilistic t-conorm a + b - ab.
double fuzzy_union(double a, double b);

struct CurveParams {
  double a = 1.0;
  double b = 1.0;
};

/// Least-squares fit of 1 / (1 + a d^(2b)) to the target that is 1 up to
/// min_dist and exp(-(d - min_dist)) beyond, on 300 points over [0, 3].
CurveParams fit_embedding_curve(double min_dist);

struct FuzzyGraph {
  struct Edge {
    std::size_t i;
    std::size_t j;
    double weight;
  };
  std::size_t n = 0;
  std::vector<Edge> edges;  // i < j, sorted, weight in (0, 1]
  std::vector<double> rho;
  std::vector<double> sigma;

  /// Symmetric lookup; 0 when absent (including i == j).
  double weight(std::size_t i, std::size_t j) const;
};

FuzzyGraph fuzzy_graph(const KnnGraph& knn);

/// Seeded stochastic-gradient layout: attractive moves along edges sampled in
/// proportion to weight, negative_sample_rate repulsive samples per attraction,
/// learning rate decaying linearly to zero.
Matrix optimize_layout(const FuzzyGraph& graph, const ManifoldConfig& config);

struct FittedManifold {
  Matrix training_points;
  Matrix training_layout;
  ManifoldConfig config;
  std::size_t effective_neighbors = 0;
};

std::pair<FittedManifold, Matrix> fit(const Matrix& x, const ManifoldConfig& config);

/// Each row of y lands at the membership-weighted mean of the layouts of its
/// nearest training points.
Matrix transform(const FittedManifold& fitted, const Matrix& y);

/// Fraction-style neighbourhood preservation score in [0, 1].
double trustworthiness(const Matrix& original, const Matrix& embedded, std::size_t k);

}  // namespace topicscope::manifold
