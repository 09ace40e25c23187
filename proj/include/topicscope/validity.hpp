#pragma once

// Density-based clustering validation (DBCV) and multi-class classification metrics.

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"

namespace topicscope::validity {

/// Raised when fewer than two clusters with at least two points remain.
class UndefinedValidity : public std::domain_error {
 public:
  UndefinedValidity() : std::domain_error("undefined validity: fewer than two clusters with >= 2 points") {}
};

struct ValidityReport {
  std::map<int, double> per_cluster_validity;
  std::vector<int> singleton_clusters;  // scored 0 and excluded from separation
  double score = 0.0;
  std::size_t n_points = 0;
  std::size_t n_noise = 0;
};

nlohmann::json to_json(const ValidityReport& r);

/// ((sum over other members s of (1/d(o,s))^dim) / (|C| - 1))^(-1/dim), with
/// distances floored at 1e-12. `point` indexes into `cluster`.
double allpoints_core_distance(std::size_t point, const Matrix& cluster, std::size_t dim);

/// Maximum internal-edge weight of the cluster's mutual-reachability MST
/// (internal = both endpoints have MST degree >= 2); falls back to the
/// maximum MST edge when no internal edge exists.
double density_sparseness(const Matrix& cluster, std::size_t dim);

/// Minimum mutual reachability between the internal MST nodes of the two
/// clusters; a side without internal nodes contributes all its points.
double density_separation(const Matrix& ci, const Matrix& cj, std::size_t dim);

/// Sum over clusters of (|C|/N) * V(C) with N counting noise points.
ValidityReport dbcv(const Matrix& x, std::span<const int> labels);

enum class Averaging { micro, macro, weighted };
Averaging averaging_from_string(const std::string& s);

struct MetricsReport {
  Averaging averaging = Averaging::micro;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

nlohmann::json to_json(const MetricsReport& r);

/// One-vs-rest precision/recall/F1 over the union of predicted and gold labels.
MetricsReport classification_metrics(std::span<const int> predicted, std::span<const int> gold,
                                     Averaging averaging);

}  // namespace topicscope::validity
