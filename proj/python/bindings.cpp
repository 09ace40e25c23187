#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "topicscope/density.hpp"
#include "topicscope/dynamics.hpp"
#include "topicscope/manifold.hpp"
#include "topicscope/topics.hpp"
#include "topicscope/validity.hpp"

namespace py = pybind11;
using namespace topicscope;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values().begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::dict test_result(const dynamics::TestResult& r) {
  py::dict d;
  d["test"] = r.test;
  d["statistic"] = r.statistic;
  d["p_value"] = r.p_value;
  d["significant"] = r.significant;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Numerical core of topicscope: clustering validity, density clustering, layouts, topic terms and tests.";

  m.def("dbcv", [](const Array& x, const std::vector<int>& labels) {
    const auto r = validity::dbcv(to_matrix(x), labels);
    py::dict d;
    d["score"] = r.score;
    d["per_cluster_validity"] = r.per_cluster_validity;
    d["n_noise"] = r.n_noise;
    return d;
  }, py::arg("x"), py::arg("labels"));

  m.def("hdbscan", [](const Array& x, std::size_t min_samples, std::size_t min_cluster_size, const std::string& method) {
    density::ClusterConfig c;
    c.min_samples = min_samples;
    c.min_cluster_size = min_cluster_size;
    c.cluster_selection_method = density::selection_method_from_string(method);
    return density::fit(to_matrix(x), c).first;
  }, py::arg("x"), py::arg("min_samples") = 5, py::arg("min_cluster_size") = 5, py::arg("method") = "eom");

  m.def("layout", [](const Array& x, std::size_t n_neighbors, double min_dist, std::size_t n_components,
                     std::uint64_t seed) {
    manifold::ManifoldConfig c;
    c.n_neighbors = n_neighbors;
    c.min_dist = min_dist;
    c.n_components = n_components;
    c.seed = seed;
    return to_array(manifold::fit(to_matrix(x), c).second);
  }, py::arg("x"), py::arg("n_neighbors") = 15, py::arg("min_dist") = 0.1, py::arg("n_components") = 2,
        py::arg("seed") = 42);

  m.def("trustworthiness", [](const Array& original, const Array& embedded, std::size_t k) {
    return manifold::trustworthiness(to_matrix(original), to_matrix(embedded), k);
  }, py::arg("original"), py::arg("embedded"), py::arg("k") = 10);

  m.def("tokenize", [](const std::string& text) { return topics::tokenize(text); });

  m.def("class_tf_idf", [](const std::vector<std::string>& documents, const std::vector<int>& labels,
                           bool reduce_frequent_words) {
    const auto vocab = topics::count_vectorize(documents, labels);
    const auto w = topics::class_tf_idf(vocab.class_counts, reduce_frequent_words);
    std::vector<std::vector<double>> rows;
    for (std::size_t t = 0; t < w.rows.size(); ++t) rows.push_back(w.dense_row(t));
    return py::make_tuple(vocab.terms, rows);
  }, py::arg("documents"), py::arg("labels"), py::arg("reduce_frequent_words") = true);

  m.def("mmr", [](const Array& candidates, const std::vector<double>& topic, double lambda, std::size_t k) {
    return topics::mmr_diversify(to_matrix(candidates), topic, lambda, k);
  }, py::arg("candidates"), py::arg("topic"), py::arg("lambda_") = 0.7, py::arg("k") = 10);

  m.def("kruskal_wallis", [](const std::vector<std::vector<double>>& groups) {
    return test_result(dynamics::kruskal_wallis(groups));
  });

  m.def("mcnemar_exact", [](std::size_t b, std::size_t c) { return test_result(dynamics::mcnemar_exact(b, c)); });

  m.def("dunn", [](const std::vector<std::vector<double>>& groups, const std::string& correction) {
    py::list out;
    for (const auto& p : dynamics::dunn_test(groups, dynamics::correction_from_string(correction)).pairs) {
      py::dict d;
      d["pair"] = py::make_tuple(p.group_i, p.group_j);
      d["z"] = p.z;
      d["raw_p"] = p.raw_p;
      d["adjusted_p"] = p.adjusted_p;
      out.append(d);
    }
    return out;
  }, py::arg("groups"), py::arg("correction") = "holm");

  m.def("bin_index", [](const std::string& window_start, int granularity, const std::string& date) {
    return dynamics::bin_index(Date::parse(window_start), granularity, Date::parse(date));
  });
}
