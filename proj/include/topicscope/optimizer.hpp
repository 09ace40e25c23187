#pragma once

// Random search over reducer/clusterer hyperparameters scored by DBCV on a
// fixed validation subset, the model registry, and the final full-data fit.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"
#include "topicscope/density.hpp"
#include "topicscope/embed.hpp"
#include "topicscope/manifold.hpp"
#include "topicscope/topics.hpp"

namespace topicscope::optimizer {

/// Integer grid start, start + step, ... up to end; end itself is always included.
struct IntRange {
  long start = 0;
  long end = 0;
  long step = 1;
  std::vector<long> values() const;
};

/// Real grid start + i * step; end itself is always included.
struct RealRange {
  double start = 0.0;
  double end = 0.0;
  double step = 1.0;
  std::vector<double> values() const;
};

struct SearchSpace {
  IntRange n_neighbors{1, 100, 5};
  RealRange min_dist{0.0, 1.0, 0.05};
  IntRange n_components{5, 50, 5};
  IntRange min_samples{10, 100, 10};
  IntRange min_cluster_size{25, 100, 5};
  std::vector<std::string> metrics{"euclidean"};
  std::vector<density::SelectionMethod> selection_methods{density::SelectionMethod::eom,
                                                          density::SelectionMethod::leaf};

  void validate() const;
};

nlohmann::json to_json(const SearchSpace& s);
/// Missing keys keep their defaults.
SearchSpace search_space_from_json(const nlohmann::json& j);

struct TrialConfig {
  manifold::ManifoldConfig manifold;
  density::ClusterConfig cluster;
  bool operator==(const TrialConfig&) const = default;
};

nlohmann::json to_json(const TrialConfig& c);
TrialConfig trial_config_from_json(const nlohmann::json& j);

/// One uniform draw per parameter, in declaration order.
TrialConfig sample_config(const SearchSpace& space, Rng& rng);

/// ceil(fraction * n) distinct indices drawn without replacement, ascending.
std::vector<std::size_t> validation_subset(std::size_t n, double fraction, Rng& rng);

struct TrialResult {
  std::size_t trial_index = 0;
  TrialConfig config;
  std::optional<double> dbcv_score;  // empty = failure marker
  std::string failure;
  std::size_t n_topics = 0;
  double noise_fraction = 0.0;
  double wall_time = 0.0;  // seconds; kept out of the reproducible log

  bool failed() const { return !dbcv_score.has_value(); }
  /// Failures compare as -infinity.
  double comparable() const;
};

nlohmann::json to_json(const TrialResult& r);
TrialResult trial_result_from_json(const nlohmann::json& j);

struct TrialOutput {
  TrialResult result;
  std::optional<manifold::FittedManifold> manifold;
  std::optional<density::FittedClusterer> clusterer;
};

/// Reduce, cluster and score one subset. Degenerate configurations come back
/// as failure markers instead of exceptions.
TrialOutput run_trial(const Matrix& subset, const TrialConfig& config, std::size_t trial_index = 0);

struct OptimizerConfig {
  std::size_t steps = 100;
  double validation_fraction = 0.20;
  double registration_threshold = 0.30;
  std::uint64_t seed = 0;
  std::size_t parallel = 1;

  void validate() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

struct RegistryEntry {
  std::string entry_id;
  std::string kind;  // "search" or "final"
  TrialConfig config;
  std::optional<double> dbcv_score;
  std::size_t trial_index = 0;
  std::size_t n_topics = 0;
  std::string provider_fingerprint;
  std::string data_fingerprint;
  std::filesystem::path checkpoint_path;
  std::filesystem::path portable_path;
  std::string created_at;
};

nlohmann::json to_json(const RegistryEntry& e);

/// What registration persists beyond the manifest.
struct ModelState {
  std::optional<manifold::FittedManifold> manifold;
  std::optional<density::FittedClusterer> clusterer;
  const topics::TopicModel* topic_model = nullptr;
  std::vector<std::size_t> subset;  // validation subset (search entries)
  std::uint64_t seed = 0;
};

/// Directory-backed registry: entries/<id>/manifest.json with checkpoint/ and
/// portable/ subdirectories, plus serving.json naming the serving entry.
class Registry {
 public:
  explicit Registry(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::vector<RegistryEntry> entries() const;
  std::optional<RegistryEntry> find(const std::string& entry_id) const;
  /// Highest registered search score, if any.
  std::optional<double> best_search_score() const;

  /// Refuses scores not above `threshold` or not strictly above every
  /// registered search score.
  RegistryEntry register_search(const TrialResult& trial, const ModelState& state, double threshold,
                                const std::string& provider_fingerprint, const std::string& data_fingerprint);
  RegistryEntry register_final(const TrialConfig& config, std::optional<double> dbcv_score, std::size_t n_topics,
                               const ModelState& state, const std::string& provider_fingerprint,
                               const std::string& data_fingerprint);

  void set_serving(const std::string& entry_id);
  std::optional<std::string> serving() const;

  /// Removes every entry except the best search entry and the serving entry;
  /// returns the removed ids.
  std::vector<std::string> prune();

 private:
  RegistryEntry write_entry(RegistryEntry entry, const ModelState& state);
  std::string next_id() const;

  std::filesystem::path root_;
};

void save_manifold(const std::filesystem::path& dir, const manifold::FittedManifold& m);
manifold::FittedManifold load_manifold(const std::filesystem::path& dir);
void save_clusterer(const std::filesystem::path& dir, const density::FittedClusterer& c);
density::FittedClusterer load_clusterer(const std::filesystem::path& dir);

using TrialRunner = std::function<TrialOutput(std::size_t trial_index, const TrialConfig& config)>;

struct SearchContext {
  std::string provider_fingerprint;
  std::string data_fingerprint;
  std::filesystem::path trial_log;    // JSON lines, rewritten per run; empty = none
  std::filesystem::path timing_log;   // wall times, one line per trial; empty = none
  TrialRunner runner;                 // defaults to run_trial on the validation subset
};

struct SearchOutcome {
  TrialResult best;
  std::vector<TrialResult> trials;
  std::vector<double> best_so_far;  // after each trial; -inf until the first success
  std::vector<std::size_t> registered_trials;
  std::vector<std::string> registered_entries;
  std::vector<std::size_t> subset;
};

/// Exactly `steps` trials. Configurations are drawn up front from the seed, so
/// parallel execution yields the same log. After each trial (in index order) a
/// strict new maximum above the threshold is registered before moving on.
SearchOutcome random_search(const Matrix& dataset, const SearchSpace& space, const OptimizerConfig& config,
                            Registry* registry, const SearchContext& context = {});

struct FinalModel {
  manifold::FittedManifold manifold;
  density::FittedClusterer clusterer;
  Matrix reduced;
  std::vector<int> labels;
  std::optional<double> dbcv_score;
  topics::TopicModel topic_model;
};

/// Reducer and clusterer fitted on every point, labels renumbered by size.
/// Throws when no valid cluster emerges.
FinalModel fit_structure(const Matrix& dataset, const TrialConfig& config);

/// Registers a fitted model (with its topic model) and makes it the serving entry.
RegistryEntry register_serving(Registry& registry, const FinalModel& model, const std::string& provider_fingerprint,
                               const std::string& data_fingerprint);

/// fit_structure, then topic representations, then (with a registry)
/// register_serving.
FinalModel fit_final(const Matrix& dataset, const std::vector<std::string>& texts,
                     const std::vector<std::string>& document_ids, const TrialConfig& config,
                     embed::Provider& provider, const topics::RepresentationConfig& representation,
                     Registry* registry = nullptr, const std::string& data_fingerprint = {},
                     std::string* entry_id = nullptr);

}  // namespace topicscope::optimizer
