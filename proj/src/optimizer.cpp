#include "topicscope/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>

#include "topicscope/io.hpp"
#include "topicscope/validity.hpp"

namespace topicscope::optimizer {

using nlohmann::json;

std::vector<long> IntRange::values() const {
  if (step <= 0 || end < start) throw InvalidArgument("invalid integer range");
  std::vector<long> out;
  for (long v = start; v <= end; v += step) out.push_back(v);
  if (out.back() != end) out.push_back(end);
  return out;
}

std::vector<double> RealRange::values() const {
  if (!(step > 0.0) || end < start) throw InvalidArgument("invalid real range");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((end - start) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(std::min(end, start + static_cast<double>(i) * step));
  if (std::abs(out.back() - end) > 1e-9) out.push_back(end);
  return out;
}

void SearchSpace::validate() const {
  for (const auto* r : {&n_neighbors, &n_components, &min_samples, &min_cluster_size}) (void)r->values();
  (void)min_dist.values();
  if (metrics.empty()) throw InvalidArgument("search space needs at least one metric");
  if (selection_methods.empty()) throw InvalidArgument("search space needs at least one selection method");
}

namespace {

json range_json(const IntRange& r) { return json::array({r.start, r.end, r.step}); }
json range_json(const RealRange& r) { return json::array({r.start, r.end, r.step}); }

template <typename R, typename T>
void read_range(const json& j, const char* key, R& r) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw InvalidArgument(std::string("range ") + key + " needs [start, end, step]");
  r = R{a[0].get<T>(), a[1].get<T>(), a[2].get<T>()};
}

}  // namespace

json to_json(const SearchSpace& s) {
  json methods = json::array();
  for (const auto m : s.selection_methods) methods.push_back(density::to_string(m));
  return {{"n_neighbors", range_json(s.n_neighbors)},
          {"min_dist", range_json(s.min_dist)},
          {"n_components", range_json(s.n_components)},
          {"min_samples", range_json(s.min_samples)},
          {"min_cluster_size", range_json(s.min_cluster_size)},
          {"metric", s.metrics},
          {"cluster_selection_method", methods}};
}

SearchSpace search_space_from_json(const json& j) {
  SearchSpace s;
  read_range<IntRange, long>(j, "n_neighbors", s.n_neighbors);
  read_range<RealRange, double>(j, "min_dist", s.min_dist);
  read_range<IntRange, long>(j, "n_components", s.n_components);
  read_range<IntRange, long>(j, "min_samples", s.min_samples);
  read_range<IntRange, long>(j, "min_cluster_size", s.min_cluster_size);
  if (j.contains("metric")) s.metrics = j.at("metric").get<std::vector<std::string>>();
  if (j.contains("cluster_selection_method")) {
    s.selection_methods.clear();
    for (const auto& m : j.at("cluster_selection_method")) {
      s.selection_methods.push_back(density::selection_method_from_string(m.get<std::string>()));
    }
  }
  s.validate();
  return s;
}

json to_json(const TrialConfig& c) { return {{"manifold", manifold::to_json(c.manifold)}, {"cluster", density::to_json(c.cluster)}}; }

TrialConfig trial_config_from_json(const json& j) {
  return {manifold::manifold_config_from_json(j.at("manifold")), density::cluster_config_from_json(j.at("cluster"))};
}

TrialConfig sample_config(const SearchSpace& space, Rng& rng) {
  auto pick = [&](const auto& values) { return values[rng.index(values.size())]; };
  TrialConfig c;
  c.manifold.n_neighbors = static_cast<std::size_t>(pick(space.n_neighbors.values()));
  c.manifold.min_dist = pick(space.min_dist.values());
  c.manifold.n_components = static_cast<std::size_t>(pick(space.n_components.values()));
  c.cluster.min_samples = static_cast<std::size_t>(pick(space.min_samples.values()));
  c.cluster.min_cluster_size = static_cast<std::size_t>(pick(space.min_cluster_size.values()));
  c.manifold.metric = pick(space.metrics);
  c.cluster.metric = c.manifold.metric;
  c.cluster.cluster_selection_method = pick(space.selection_methods);
  return c;
}

std::vector<std::size_t> validation_subset(std::size_t n, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("validation fraction must lie in (0, 1]");
  const auto m = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double TrialResult::comparable() const {
  return dbcv_score ? *dbcv_score : -std::numeric_limits<double>::infinity();
}

json to_json(const TrialResult& r) {
  json j = {{"trial_index", r.trial_index},
            {"config", to_json(r.config)},
            {"dbcv_score", r.dbcv_score ? json(*r.dbcv_score) : json(nullptr)},
            {"n_topics", r.n_topics},
            {"noise_fraction", r.noise_fraction}};
  if (r.failed()) j["failure"] = r.failure;
  return j;
}

TrialResult trial_result_from_json(const json& j) {
  TrialResult r;
  r.trial_index = j.at("trial_index").get<std::size_t>();
  r.config = trial_config_from_json(j.at("config"));
  if (!j.at("dbcv_score").is_null()) r.dbcv_score = j.at("dbcv_score").get<double>();
  r.failure = j.value("failure", std::string());
  r.n_topics = j.at("n_topics").get<std::size_t>();
  r.noise_fraction = j.at("noise_fraction").get<double>();
  r.wall_time = j.value("wall_time", 0.0);
  return r;
}

TrialOutput run_trial(const Matrix& subset, const TrialConfig& config, std::size_t trial_index) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialOutput out;
  out.result.trial_index = trial_index;
  out.result.config = config;
  try {
    if (subset.rows() == 0) throw InvalidArgument("empty validation subset");
    auto [fm, layout] = manifold::fit(subset, config.manifold);
    auto [labels, fc] = density::fit(layout, config.cluster);
    out.result.n_topics = fc.n_clusters();
    const auto noise = std::count(labels.begin(), labels.end(), density::kNoise);
    out.result.noise_fraction = static_cast<double>(noise) / static_cast<double>(labels.size());
    out.result.dbcv_score = validity::dbcv(layout, labels).score;
    out.manifold = std::move(fm);
    out.clusterer = std::move(fc);
  } catch (const validity::UndefinedValidity& e) {
    out.result.failure = e.what();
  } catch (const InvalidArgument& e) {
    out.result.failure = e.what();
  }
  out.result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void OptimizerConfig::validate() const {
  if (steps < 1) throw InvalidArgument("steps must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction <= 1.0)) {
    throw InvalidArgument("validation fraction must lie in (0, 1]");
  }
  if (parallel < 1) throw InvalidArgument("parallel must be >= 1");
}

json to_json(const OptimizerConfig& c) {
  return {{"steps", c.steps},
          {"validation_fraction", c.validation_fraction},
          {"registration_threshold", c.registration_threshold},
          {"seed", c.seed},
          {"parallel", c.parallel}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
  OptimizerConfig c;
  c.steps = j.value("steps", c.steps);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.registration_threshold = j.value("registration_threshold", c.registration_threshold);
  c.seed = j.value("seed", c.seed);
  c.parallel = j.value("parallel", c.parallel);
  c.validate();
  return c;
}

SearchOutcome random_search(const Matrix& dataset, const SearchSpace& space, const OptimizerConfig& config,
                            Registry* registry, const SearchContext& context) {
  space.validate();
  config.validate();
  if (dataset.rows() == 0) throw InvalidArgument("dataset is empty");

  SearchOutcome outcome;
  Rng rng(config.seed);
  outcome.subset = validation_subset(dataset.rows(), config.validation_fraction, rng);
  std::vector<TrialConfig> configs;
  for (std::size_t i = 0; i < config.steps; ++i) {
    TrialConfig c = sample_config(space, rng);
    c.manifold.seed = mix_seed(config.seed, i);
    configs.push_back(c);
  }
  const Matrix subset = dataset.select_rows(outcome.subset);
  TrialRunner runner = context.runner;
  if (!runner) {
    runner = [&subset](std::size_t index, const TrialConfig& c) { return run_trial(subset, c, index); };
  }

  std::ofstream log, timing;
  if (!context.trial_log.empty()) {
    std::filesystem::create_directories(context.trial_log.parent_path().empty() ? "." : context.trial_log.parent_path());
    log.open(context.trial_log, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write trial log " + context.trial_log.string());
  }
  if (!context.timing_log.empty()) timing.open(context.timing_log, std::ios::trunc);

  double best = -std::numeric_limits<double>::infinity();
  double registered_best = -std::numeric_limits<double>::infinity();
  if (registry) registered_best = registry->best_search_score().value_or(registered_best);
  std::optional<TrialResult> best_trial;
  for (std::size_t wave = 0; wave < config.steps; wave += config.parallel) {
    const std::size_t end = std::min(config.steps, wave + config.parallel);
    std::vector<TrialOutput> outputs;
    if (end - wave == 1) {
      outputs.push_back(runner(wave, configs[wave]));
    } else {
      std::vector<std::future<TrialOutput>> futures;
      for (std::size_t i = wave; i < end; ++i) {
        futures.push_back(std::async(std::launch::async, runner, i, configs[i]));
      }
      for (auto& f : futures) outputs.push_back(f.get());
    }
    // results are consumed strictly in trial order
    for (auto& out : outputs) {
      TrialResult& r = out.result;
      if (log) log << to_json(r).dump() << '\n' << std::flush;
      if (timing) timing << json{{"trial_index", r.trial_index}, {"wall_time", r.wall_time}}.dump() << '\n';
      const double score = r.comparable();
      if (score > best) {
        best = score;
        best_trial = r;
        const bool above_registered = score > registered_best;
        if (score > config.registration_threshold && above_registered) {
          if (registry) {
            ModelState state;
            state.manifold = std::move(out.manifold);
            state.clusterer = std::move(out.clusterer);
            state.subset = outcome.subset;
            state.seed = config.seed;
            const auto entry = registry->register_search(r, state, config.registration_threshold,
                                                         context.provider_fingerprint, context.data_fingerprint);
            outcome.registered_entries.push_back(entry.entry_id);
          }
          registered_best = score;
          outcome.registered_trials.push_back(r.trial_index);
        }
      }
      outcome.best_so_far.push_back(best);
      outcome.trials.push_back(std::move(r));
    }
  }
  if (!best_trial || best_trial->failed()) throw std::runtime_error("no valid configuration found");
  outcome.best = *best_trial;
  return outcome;
}

namespace {

// Applies an old -> new label permutation to a fitted clusterer.
void permute_clusterer(density::FittedClusterer& c, const std::vector<int>& remap) {
  const std::size_t k = c.death_lambda.size();
  std::vector<double> death(k), stab(k);
  for (std::size_t old = 0; old < k; ++old) {
    death[static_cast<std::size_t>(remap[old])] = c.death_lambda[old];
    stab[static_cast<std::size_t>(remap[old])] = c.stability[old];
  }
  c.death_lambda = std::move(death);
  c.stability = std::move(stab);
  for (auto& l : c.exemplar_labels) l = remap[static_cast<std::size_t>(l)];
  for (auto& l : c.labels) {
    if (l >= 0) l = remap[static_cast<std::size_t>(l)];
  }
}

}  // namespace

FinalModel fit_structure(const Matrix& dataset, const TrialConfig& config) {
  FinalModel m;
  auto [fm, layout] = manifold::fit(dataset, config.manifold);
  m.manifold = std::move(fm);
  m.reduced = std::move(layout);
  auto [labels, fc] = density::fit(m.reduced, config.cluster);
  if (fc.n_clusters() == 0) throw std::runtime_error("clustering produced no valid clusters");

  m.labels = topics::relabel_by_size(labels);
  std::vector<int> remap(fc.n_clusters(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) remap[static_cast<std::size_t>(labels[i])] = m.labels[i];
  }
  permute_clusterer(fc, remap);
  m.clusterer = std::move(fc);
  try {
    m.dbcv_score = validity::dbcv(m.reduced, m.labels).score;
  } catch (const validity::UndefinedValidity&) {
  }
  return m;
}

RegistryEntry register_serving(Registry& registry, const FinalModel& m, const std::string& provider_fingerprint,
                               const std::string& data_fingerprint) {
  ModelState state;
  state.manifold = m.manifold;
  state.clusterer = m.clusterer;
  state.topic_model = &m.topic_model;
  const TrialConfig config{m.manifold.config, m.clusterer.config};
  auto entry = registry.register_final(config, m.dbcv_score, m.topic_model.n_topics(), state, provider_fingerprint,
                                       data_fingerprint);
  registry.set_serving(entry.entry_id);
  return entry;
}

FinalModel fit_final(const Matrix& dataset, const std::vector<std::string>& texts,
                     const std::vector<std::string>& document_ids, const TrialConfig& config,
                     embed::Provider& provider, const topics::RepresentationConfig& representation,
                     Registry* registry, const std::string& data_fingerprint, std::string* entry_id) {
  if (texts.size() != dataset.rows()) throw InvalidArgument("texts and embeddings differ in length");
  FinalModel m = fit_structure(dataset, config);
  m.topic_model = topics::build_topic_model(texts, m.labels, dataset, m.reduced, document_ids, provider, representation);
  if (registry) {
    const auto entry = register_serving(*registry, m, provider.fingerprint(), data_fingerprint);
    if (entry_id) *entry_id = entry.entry_id;
  }
  return m;
}

}  // namespace topicscope::optimizer
