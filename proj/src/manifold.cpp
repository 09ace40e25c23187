#include "topicscope/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace topicscope::manifold {

using nlohmann::json;

void ManifoldConfig::validate() const {
  if (n_neighbors < 2) throw InvalidArgument("n_neighbors must be >= 2");
  if (n_components < 1) throw InvalidArgument("n_components must be >= 1");
  if (!(min_dist >= 0.0 && min_dist <= 1.0)) throw InvalidArgument("min_dist must lie in [0, 1]");
  if (metric != "euclidean") throw InvalidArgument("unsupported metric: " + metric);
  if (negative_sample_rate < 1) throw InvalidArgument("negative_sample_rate must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
}

std::size_t ManifoldConfig::epochs_for(std::size_t n_points) const {
  if (n_epochs > 0) return n_epochs;
  return n_points <= 10000 ? 200 : 500;
}

json to_json(const ManifoldConfig& c) {
  return {{"n_neighbors", c.n_neighbors},
          {"min_dist", c.min_dist},
          {"n_components", c.n_components},
          {"metric", c.metric},
          {"n_epochs", c.n_epochs},
          {"negative_sample_rate", c.negative_sample_rate},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed}};
}

ManifoldConfig manifold_config_from_json(const json& j) {
  ManifoldConfig c;
  c.n_neighbors = j.value("n_neighbors", c.n_neighbors);
  c.min_dist = j.value("min_dist", c.min_dist);
  c.n_components = j.value("n_components", c.n_components);
  c.metric = j.value("metric", c.metric);
  c.n_epochs = j.value("n_epochs", c.n_epochs);
  c.negative_sample_rate = j.value("negative_sample_rate", c.negative_sample_rate);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  return c;
}

KnnGraph knn_graph(const Matrix& x, std::size_t k, const std::string& metric) {
  if (metric != "euclidean") throw InvalidArgument("unsupported metric: " + metric);
  const std::size_t n = x.rows();
  if (k >= n) {
    throw InvalidArgument("k = " + std::to_string(k) + " needs more than " + std::to_string(n) + " points");
  }
  KnnGraph g{n, k, std::vector<std::size_t>(n * k), std::vector<double>(n * k)};
  std::vector<std::pair<double, std::size_t>> row(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row[m++] = {euclidean(x.row(i), x.row(j)), j};
    }
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end());
    for (std::size_t r = 0; r < k; ++r) {
      g.distances[i * k + r] = row[r].first;
      g.indices[i * k + r] = row[r].second;
    }
  }
  return g;
}

Calibration smooth_knn_calibration(std::span<const double> distances) {
  constexpr double kTolerance = 1e-5;
  constexpr int kMaxIter = 64;
  constexpr double kSigmaFloor = 1e-12;
  if (distances.empty()) throw InvalidArgument("calibration needs at least one distance");
  if (std::all_of(distances.begin(), distances.end(), [](double d) { return d == 0.0; })) {
    return {0.0, 1.0};
  }
  const double target = std::log2(static_cast<double>(distances.size()));
  const double rho = distances.front();
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double mid = 1.0;
  for (int iter = 0; iter < kMaxIter; ++iter) {
    double psum = 0.0;
    for (const double d : distances) psum += std::exp(-std::max(0.0, d - rho) / mid);
    if (std::abs(psum - target) <= kTolerance) break;
    if (psum > target) {
      hi = mid;
      mid = (lo + hi) / 2.0;
    } else {
      lo = mid;
      mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
    }
  }
  return {rho, std::max(mid, kSigmaFloor)};
}

double fuzzy_union(double a, double b) { return a + b - a * b; }

CurveParams fit_embedding_curve(double min_dist) {
  if (min_dist < 0.0) throw InvalidArgument("min_dist must be >= 0");
  constexpr std::size_t kSamples = 300;
  constexpr double kSpan = 3.0;
  std::vector<double> xs(kSamples), ys(kSamples);
  for (std::size_t i = 0; i < kSamples; ++i) {
    xs[i] = kSpan * static_cast<double>(i) / static_cast<double>(kSamples - 1);
    ys[i] = xs[i] <= min_dist ? 1.0 : std::exp(-(xs[i] - min_dist));
  }

  // Levenberg-Marquardt in log-parameters so that a, b stay positive.
  double la = 0.0, lb = 0.0;
  auto sse = [&](double pa, double pb) {
    const double a = std::exp(pa), b = std::exp(pb);
    double s = 0.0;
    for (std::size_t i = 0; i < kSamples; ++i) {
      const double r = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b)) - ys[i];
      s += r * r;
    }
    return s;
  };
  double damping = 1e-3;
  double current = sse(la, lb);
  bool converged = false;
  for (int iter = 0; iter < 500 && !converged; ++iter) {
    const double a = std::exp(la), b = std::exp(lb);
    double jtj00 = 0, jtj01 = 0, jtj11 = 0, g0 = 0, g1 = 0;
    for (std::size_t i = 0; i < kSamples; ++i) {
      const double x = xs[i];
      const double u = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
      const double denom = 1.0 + a * u;
      const double f = 1.0 / denom;
      const double r = f - ys[i];
      const double dfa = -u / (denom * denom) * a;
      const double dfb = x > 0.0 ? -a * u * 2.0 * std::log(x) / (denom * denom) * b : 0.0;
      jtj00 += dfa * dfa;
      jtj01 += dfa * dfb;
      jtj11 += dfb * dfb;
      g0 += dfa * r;
      g1 += dfb * r;
    }
    bool improved = false;
    while (damping < 1e12) {
      const double m00 = jtj00 * (1.0 + damping), m11 = jtj11 * (1.0 + damping);
      const double det = m00 * m11 - jtj01 * jtj01;
      if (det == 0.0) {
        damping *= 10.0;
        continue;
      }
      const double da = -(m11 * g0 - jtj01 * g1) / det;
      const double db = -(m00 * g1 - jtj01 * g0) / det;
      const double candidate = sse(la + da, lb + db);
      if (candidate < current) {
        const double rel = (current - candidate) / std::max(current, 1e-300);
        la += da;
        lb += db;
        current = candidate;
        damping = std::max(damping / 10.0, 1e-12);
        improved = true;
        converged = rel < 1e-14;
        break;
      }
      damping *= 10.0;
    }
    if (!improved) break;
  }
  return {std::exp(la), std::exp(lb)};
}

double FuzzyGraph::weight(std::size_t i, std::size_t j) const {
  if (i == j) return 0.0;
  if (i > j) std::swap(i, j);
  auto it = std::lower_bound(edges.begin(), edges.end(), std::make_pair(i, j),
                             [](const Edge& e, const std::pair<std::size_t, std::size_t>& key) {
                               return std::tie(e.i, e.j) < std::tie(key.first, key.second);
                             });
  if (it != edges.end() && it->i == i && it->j == j) return it->weight;
  return 0.0;
}

FuzzyGraph fuzzy_graph(const KnnGraph& knn) {
  FuzzyGraph g;
  g.n = knn.n;
  g.rho.resize(knn.n);
  g.sigma.resize(knn.n);
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> directed;
  for (std::size_t i = 0; i < knn.n; ++i) {
    const auto cal = smooth_knn_calibration(knn.dists(i));
    g.rho[i] = cal.rho;
    g.sigma[i] = cal.sigma;
    const auto nbrs = knn.neighbors(i);
    const auto ds = knn.dists(i);
    for (std::size_t r = 0; r < knn.k; ++r) {
      const std::size_t j = nbrs[r];
      if (j == i) continue;
      const double w = std::exp(-std::max(0.0, ds[r] - cal.rho) / cal.sigma);
      auto& slot = directed[{std::min(i, j), std::max(i, j)}];
      (i < j ? slot.first : slot.second) = w;
    }
  }
  g.edges.reserve(directed.size());
  for (const auto& [key, w] : directed) {
    const double u = std::clamp(fuzzy_union(w.first, w.second), 0.0, 1.0);
    if (u > 0.0) g.edges.push_back({key.first, key.second, u});
  }
  return g;
}

namespace {

double clip(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

Matrix optimize_layout(const FuzzyGraph& graph, const ManifoldConfig& config) {
  if (graph.edges.empty() || graph.n == 0) throw InvalidArgument("cannot lay out an empty graph");
  const std::size_t n = graph.n;
  const std::size_t dim = config.n_components;
  const std::size_t n_epochs = config.epochs_for(n);
  const CurveParams curve = fit_embedding_curve(config.min_dist);
  const double a = curve.a, b = curve.b;

  Rng rng(mix_seed(config.seed, 0x6c61796f7574ULL));
  Matrix y(n, dim);
  for (auto& v : y.values()) v = rng.uniform(-10.0, 10.0);

  double max_w = 0.0;
  for (const auto& e : graph.edges) max_w = std::max(max_w, e.weight);
  struct Directed {
    std::size_t head, tail;
    double eps;
  };
  std::vector<Directed> edges;
  for (const auto& e : graph.edges) {
    if (e.weight < max_w / static_cast<double>(n_epochs)) continue;
    const double eps = max_w / e.weight;
    edges.push_back({e.i, e.j, eps});
    edges.push_back({e.j, e.i, eps});
  }
  if (edges.empty()) throw InvalidArgument("no edge survives the sampling threshold");

  const double neg_rate = static_cast<double>(config.negative_sample_rate);
  std::vector<double> next_sample(edges.size()), next_negative(edges.size()), eps_negative(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    next_sample[e] = edges[e].eps;
    eps_negative[e] = edges[e].eps / neg_rate;
    next_negative[e] = eps_negative[e];
  }

  std::vector<double> diff(dim);
  for (std::size_t epoch = 0; epoch < n_epochs; ++epoch) {
    const double alpha = config.learning_rate * (1.0 - static_cast<double>(epoch) / static_cast<double>(n_epochs));
    const double now = static_cast<double>(epoch);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (next_sample[e] > now) continue;
      const std::size_t j = edges[e].head;
      const std::size_t k = edges[e].tail;
      auto current = y.row(j);
      auto other = y.row(k);
      double dsq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        diff[d] = current[d] - other[d];
        dsq += diff[d] * diff[d];
      }
      if (dsq > 0.0) {
        const double coeff = -2.0 * a * b * std::pow(dsq, b - 1.0) / (a * std::pow(dsq, b) + 1.0);
        for (std::size_t d = 0; d < dim; ++d) {
          const double g = clip(coeff * diff[d]) * alpha;
          current[d] += g;
          other[d] -= g;
        }
      }
      next_sample[e] += edges[e].eps;

      const auto n_neg = static_cast<std::size_t>((now - next_negative[e]) / eps_negative[e]);
      for (std::size_t p = 0; p < n_neg; ++p) {
        const std::size_t s = rng.index(n);
        if (s == j) continue;
        auto neg = y.row(s);
        double nsq = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          diff[d] = current[d] - neg[d];
          nsq += diff[d] * diff[d];
        }
        if (nsq > 0.0) {
          const double coeff = 2.0 * b / ((0.001 + nsq) * (a * std::pow(nsq, b) + 1.0));
          for (std::size_t d = 0; d < dim; ++d) current[d] += clip(coeff * diff[d]) * alpha;
        } else {
          for (std::size_t d = 0; d < dim; ++d) current[d] += 4.0 * alpha;
        }
      }
      next_negative[e] += static_cast<double>(n_neg) * eps_negative[e];
    }
  }
  return y;
}

std::pair<FittedManifold, Matrix> fit(const Matrix& x, const ManifoldConfig& config) {
  config.validate();
  if (x.rows() < 2) throw InvalidArgument("manifold fit needs at least two points");
  for (const double v : x.values()) {
    if (!std::isfinite(v)) throw InvalidArgument("input contains non-finite values");
  }
  const std::size_t k = std::min(config.n_neighbors, x.rows() - 1);
  const KnnGraph knn = knn_graph(x, k, config.metric);
  const FuzzyGraph graph = fuzzy_graph(knn);
  Matrix layout = optimize_layout(graph, config);
  FittedManifold fitted{x, layout, config, k};
  return {std::move(fitted), std::move(layout)};
}

Matrix transform(const FittedManifold& fitted, const Matrix& y) {
  const Matrix& train = fitted.training_points;
  if (y.cols() != train.cols()) {
    throw InvalidArgument("transform input has dimension " + std::to_string(y.cols()) + ", expected " +
                          std::to_string(train.cols()));
  }
  const std::size_t n = train.rows();
  const std::size_t k = std::min<std::size_t>(
      fitted.effective_neighbors ? fitted.effective_neighbors : fitted.config.n_neighbors, n);
  const std::size_t dim = fitted.training_layout.cols();
  Matrix out(y.rows(), dim);
  std::vector<std::pair<double, std::size_t>> dists(n);
  std::vector<double> nearest(k);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t j = 0; j < n; ++j) dists[j] = {euclidean(y.row(r), train.row(j)), j};
    std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k), dists.end());
    for (std::size_t m = 0; m < k; ++m) nearest[m] = dists[m].first;
    const Calibration cal = smooth_knn_calibration(nearest);
    double total = 0.0;
    auto dst = out.row(r);
    for (std::size_t m = 0; m < k; ++m) {
      const double w = std::exp(-std::max(0.0, nearest[m] - cal.rho) / cal.sigma);
      total += w;
      const auto src = fitted.training_layout.row(dists[m].second);
      for (std::size_t d = 0; d < dim; ++d) dst[d] += w * src[d];
    }
    for (auto& v : dst) v /= total;
  }
  return out;
}

double trustworthiness(const Matrix& original, const Matrix& embedded, std::size_t k) {
  const std::size_t n = original.rows();
  if (embedded.rows() != n) throw InvalidArgument("trustworthiness needs aligned matrices");
  if (2 * n < 3 * k + 2) throw InvalidArgument("k too large for trustworthiness");
  std::vector<std::size_t> rank(n);
  std::vector<std::pair<double, std::size_t>> row(n);
  double penalty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = {j == i ? -1.0 : euclidean(original.row(i), original.row(j)), j};
    std::sort(row.begin(), row.end());
    for (std::size_t r = 0; r < n; ++r) rank[row[r].second] = r;  // self at rank 0
    for (std::size_t j = 0; j < n; ++j) row[j] = {j == i ? -1.0 : euclidean(embedded.row(i), embedded.row(j)), j};
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k + 1), row.end());
    for (std::size_t r = 1; r <= k; ++r) {
      const auto rk = rank[row[r].second];
      if (rk > k) penalty += static_cast<double>(rk - k);
    }
  }
  const double nd = static_cast<double>(n), kd = static_cast<double>(k);
  return 1.0 - 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0)) * penalty;
}

}  // namespace topicscope::manifold
