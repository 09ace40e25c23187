#include "topicscope/validity.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "topicscope/density.hpp"

namespace topicscope::validity {

using nlohmann::json;

namespace {

constexpr double kDistanceFloor = 1e-12;

struct ClusterGeometry {
  Matrix points;
  std::vector<double> core;          // all-points core distance per member
  std::vector<std::size_t> internal;  // members with MST degree >= 2 (or all, as fallback)
  double sparseness = 0.0;
};

std::vector<double> all_core_distances(const Matrix& cluster, std::size_t dim) {
  std::vector<double> out(cluster.rows());
  for (std::size_t i = 0; i < cluster.rows(); ++i) out[i] = allpoints_core_distance(i, cluster, dim);
  return out;
}

ClusterGeometry analyse(const Matrix& cluster, std::size_t dim) {
  ClusterGeometry g;
  g.points = cluster;
  g.core = all_core_distances(cluster, dim);
  const std::size_t n = cluster.rows();
  Matrix mreach(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = density::mutual_reachability(euclidean(cluster.row(i), cluster.row(j)), g.core[i], g.core[j]);
      mreach(i, j) = mreach(j, i) = v;
    }
  }
  const auto edges = density::mst(mreach);
  std::vector<std::size_t> degree(n, 0);
  for (const auto& e : edges) {
    ++degree[e.a];
    ++degree[e.b];
  }
  double internal_max = -1.0;
  double overall_max = 0.0;
  for (const auto& e : edges) {
    overall_max = std::max(overall_max, e.weight);
    if (degree[e.a] >= 2 && degree[e.b] >= 2) internal_max = std::max(internal_max, e.weight);
  }
  g.sparseness = internal_max >= 0.0 ? internal_max : overall_max;
  for (std::size_t i = 0; i < n; ++i) {
    if (degree[i] >= 2) g.internal.push_back(i);
  }
  if (g.internal.empty()) {
    g.internal.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.internal[i] = i;
  }
  return g;
}

double separation(const ClusterGeometry& a, const ClusterGeometry& b) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto i : a.internal) {
    for (const auto j : b.internal) {
      const double d = euclidean(a.points.row(i), b.points.row(j));
      best = std::min(best, density::mutual_reachability(d, a.core[i], b.core[j]));
    }
  }
  return best;
}

}  // namespace

double allpoints_core_distance(std::size_t point, const Matrix& cluster, std::size_t dim) {
  const std::size_t n = cluster.rows();
  if (n < 2) throw InvalidArgument("all-points core distance needs a cluster of at least two points");
  if (point >= n) throw InvalidArgument("point index outside the cluster");
  if (dim < 1) throw InvalidArgument("dimension must be >= 1");
  const double e = static_cast<double>(dim);
  // log of sum_s (1/d)^dim via log-sum-exp, stable for large dim.
  std::vector<double> logs;
  logs.reserve(n - 1);
  for (std::size_t s = 0; s < n; ++s) {
    if (s == point) continue;
    const double d = std::max(euclidean(cluster.row(point), cluster.row(s)), kDistanceFloor);
    logs.push_back(-e * std::log(d));
  }
  const double m = *std::max_element(logs.begin(), logs.end());
  double acc = 0.0;
  for (const double l : logs) acc += std::exp(l - m);
  const double log_mean = m + std::log(acc) - std::log(static_cast<double>(n - 1));
  return std::exp(-log_mean / e);
}

double density_sparseness(const Matrix& cluster, std::size_t dim) {
  if (cluster.rows() < 2) throw InvalidArgument("density sparseness needs at least two points");
  return analyse(cluster, dim).sparseness;
}

double density_separation(const Matrix& ci, const Matrix& cj, std::size_t dim) {
  if (ci.rows() < 2 || cj.rows() < 2) throw InvalidArgument("density separation needs clusters of >= 2 points");
  return separation(analyse(ci, dim), analyse(cj, dim));
}

ValidityReport dbcv(const Matrix& x, std::span<const int> labels) {
  if (labels.size() != x.rows()) throw InvalidArgument("labels and points differ in length");
  const std::size_t dim = x.cols();
  ValidityReport report;
  report.n_points = x.rows();

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) {
      ++report.n_noise;
    } else {
      members[labels[i]].push_back(i);
    }
  }
  std::vector<int> valid;
  for (const auto& [label, idx] : members) {
    if (idx.size() >= 2) {
      valid.push_back(label);
    } else {
      report.singleton_clusters.push_back(label);
      report.per_cluster_validity[label] = 0.0;
    }
  }
  if (valid.size() < 2) throw UndefinedValidity();

  std::vector<ClusterGeometry> geo;
  geo.reserve(valid.size());
  for (const int label : valid) geo.push_back(analyse(x.select_rows(members[label]), dim));

  const std::size_t k = valid.size();
  std::vector<double> min_sep(k, std::numeric_limits<double>::infinity());
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      const double s = separation(geo[a], geo[b]);
      min_sep[a] = std::min(min_sep[a], s);
      min_sep[b] = std::min(min_sep[b], s);
    }
  }
  const double total = static_cast<double>(report.n_points);
  for (std::size_t a = 0; a < k; ++a) {
    const double denom = std::max(min_sep[a], geo[a].sparseness);
    const double v = denom > 0.0 ? (min_sep[a] - geo[a].sparseness) / denom : 0.0;
    report.per_cluster_validity[valid[a]] = v;
    report.score += static_cast<double>(members[valid[a]].size()) / total * v;
  }
  return report;
}

json to_json(const ValidityReport& r) {
  json per = json::object();
  for (const auto& [label, v] : r.per_cluster_validity) per[std::to_string(label)] = v;
  return {{"score", r.score},
          {"per_cluster_validity", per},
          {"singleton_clusters", r.singleton_clusters},
          {"n_points", r.n_points},
          {"n_noise", r.n_noise}};
}

Averaging averaging_from_string(const std::string& s) {
  if (s == "micro") return Averaging::micro;
  if (s == "macro") return Averaging::macro;
  if (s == "weighted") return Averaging::weighted;
  throw InvalidArgument("unknown averaging: " + s);
}

json to_json(const MetricsReport& r) {
  static const char* kNames[] = {"micro", "macro", "weighted"};
  return {{"averaging", kNames[static_cast<int>(r.averaging)]},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1}};
}

MetricsReport classification_metrics(std::span<const int> predicted, std::span<const int> gold,
                                     Averaging averaging) {
  if (predicted.size() != gold.size()) throw InvalidArgument("predicted and gold labels differ in length");
  MetricsReport out;
  out.averaging = averaging;
  if (gold.empty()) return out;
  std::set<int> classes(gold.begin(), gold.end());
  classes.insert(predicted.begin(), predicted.end());
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  auto f1_of = [](double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; };

  double tp_all = 0, fp_all = 0, fn_all = 0;
  double p_sum = 0, r_sum = 0, f_sum = 0;
  double p_w = 0, r_w = 0, f_w = 0, support_total = 0;
  for (const int c : classes) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == c, p = predicted[i] == c;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
      support += g;
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    const double prec = ratio(tp, tp + fp), rec = ratio(tp, tp + fn), f1 = f1_of(prec, rec);
    p_sum += prec;
    r_sum += rec;
    f_sum += f1;
    p_w += support * prec;
    r_w += support * rec;
    f_w += support * f1;
    support_total += support;
  }
  switch (averaging) {
    case Averaging::micro:
      out.precision = ratio(tp_all, tp_all + fp_all);
      out.recall = ratio(tp_all, tp_all + fn_all);
      out.f1 = f1_of(out.precision, out.recall);
      break;
    case Averaging::macro: {
      const double k = static_cast<double>(classes.size());
      out.precision = p_sum / k;
      out.recall = r_sum / k;
      out.f1 = f_sum / k;
      break;
    }
    case Averaging::weighted:
      out.precision = ratio(p_w, support_total);
      out.recall = ratio(r_w, support_total);
      out.f1 = ratio(f_w, support_total);
      break;
  }
  return out;
}

}  // namespace topicscope::validity
