#include <algorithm>
#include <cstring>

#include "topicscope/io.hpp"
#include "topicscope/optimizer.hpp"

namespace topicscope::optimizer {

using nlohmann::json;
namespace fs = std::filesystem;

void save_manifold(const fs::path& dir, const manifold::FittedManifold& m) {
  fs::create_directories(dir);
  io::write_f64(dir / "training_points.f64", m.training_points);
  io::write_f64(dir / "training_layout.f64", m.training_layout);
  io::write_json_atomic(dir / "manifold.json", {{"config", manifold::to_json(m.config)},
                                                {"effective_neighbors", m.effective_neighbors},
                                                {"input_dim", m.training_points.cols()},
                                                {"output_dim", m.training_layout.cols()}});
}

manifold::FittedManifold load_manifold(const fs::path& dir) {
  const json meta = io::read_json(dir / "manifold.json");
  manifold::FittedManifold m;
  m.config = manifold::manifold_config_from_json(meta.at("config"));
  m.effective_neighbors = meta.at("effective_neighbors").get<std::size_t>();
  m.training_points = io::read_f64(dir / "training_points.f64", meta.at("input_dim").get<std::size_t>());
  m.training_layout = io::read_f64(dir / "training_layout.f64", meta.at("output_dim").get<std::size_t>());
  if (m.training_points.rows() != m.training_layout.rows()) throw std::runtime_error("corrupt manifold state in " + dir.string());
  return m;
}

void save_clusterer(const fs::path& dir, const density::FittedClusterer& c) {
  fs::create_directories(dir);
  io::write_f64(dir / "exemplars.f64", c.exemplars);
  io::write_i32(dir / "labels.i32", c.labels);
  io::write_json_atomic(dir / "clusterer.json", {{"config", density::to_json(c.config)},
                                                 {"dim", c.dim},
                                                 {"exemplar_labels", c.exemplar_labels},
                                                 {"death_lambda", c.death_lambda},
                                                 {"stability", c.stability}});
}

density::FittedClusterer load_clusterer(const fs::path& dir) {
  const json meta = io::read_json(dir / "clusterer.json");
  density::FittedClusterer c;
  c.config = density::cluster_config_from_json(meta.at("config"));
  c.dim = meta.at("dim").get<std::size_t>();
  c.exemplar_labels = meta.at("exemplar_labels").get<std::vector<int>>();
  c.death_lambda = meta.at("death_lambda").get<std::vector<double>>();
  c.stability = meta.at("stability").get<std::vector<double>>();
  c.exemplars = io::read_f64(dir / "exemplars.f64", c.dim);
  c.labels = io::read_i32(dir / "labels.i32");
  if (c.exemplars.rows() != c.exemplar_labels.size()) throw std::runtime_error("corrupt clusterer state in " + dir.string());
  return c;
}

json to_json(const RegistryEntry& e) {
  return {{"entry_id", e.entry_id},
          {"kind", e.kind},
          {"config", to_json(e.config)},
          {"dbcv_score", e.dbcv_score ? json(*e.dbcv_score) : json(nullptr)},
          {"trial_index", e.trial_index},
          {"n_topics", e.n_topics},
          {"provider_fingerprint", e.provider_fingerprint},
          {"data_fingerprint", e.data_fingerprint},
          {"checkpoint_path", e.checkpoint_path.string()},
          {"portable_path", e.portable_path.string()},
          {"created_at", e.created_at}};
}

namespace {

RegistryEntry entry_from_json(const json& j, const fs::path& dir) {
  RegistryEntry e;
  e.entry_id = j.at("entry_id").get<std::string>();
  e.kind = j.at("kind").get<std::string>();
  e.config = trial_config_from_json(j.at("config"));
  if (!j.at("dbcv_score").is_null()) e.dbcv_score = j.at("dbcv_score").get<double>();
  e.trial_index = j.value("trial_index", std::size_t{0});
  e.n_topics = j.value("n_topics", std::size_t{0});
  e.provider_fingerprint = j.value("provider_fingerprint", std::string());
  e.data_fingerprint = j.value("data_fingerprint", std::string());
  e.checkpoint_path = dir / "checkpoint";
  e.portable_path = dir / "portable";
  e.created_at = j.value("created_at", std::string());
  return e;
}

// u64 seed, u64 trial index, u64 subset length, then the subset indices
std::string pack_checkpoint(const ModelState& state, std::size_t trial_index) {
  std::string out;
  auto put = [&](std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); };
  put(state.seed);
  put(trial_index);
  put(state.subset.size());
  for (const auto i : state.subset) put(i);
  return out;
}

}  // namespace

Registry::Registry(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "entries"); }

std::vector<RegistryEntry> Registry::entries() const {
  std::vector<RegistryEntry> out;
  for (const auto& d : fs::directory_iterator(root_ / "entries")) {
    const auto manifest = d.path() / "manifest.json";
    if (d.is_directory() && fs::exists(manifest)) out.push_back(entry_from_json(io::read_json(manifest), d.path()));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.entry_id < b.entry_id; });
  return out;
}

std::optional<RegistryEntry> Registry::find(const std::string& entry_id) const {
  const auto manifest = root_ / "entries" / entry_id / "manifest.json";
  if (!fs::exists(manifest)) return std::nullopt;
  return entry_from_json(io::read_json(manifest), manifest.parent_path());
}

std::optional<double> Registry::best_search_score() const {
  std::optional<double> best;
  for (const auto& e : entries()) {
    if (e.kind == "search" && e.dbcv_score && (!best || *e.dbcv_score > *best)) best = e.dbcv_score;
  }
  return best;
}

std::string Registry::next_id() const {
  int max_seen = 0;
  for (const auto& d : fs::directory_iterator(root_ / "entries")) {
    const auto name = d.path().filename().string();
    if (name.rfind("entry-", 0) == 0) max_seen = std::max(max_seen, std::atoi(name.c_str() + 6));
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "entry-%04d", max_seen + 1);
  return buf;
}

RegistryEntry Registry::write_entry(RegistryEntry entry, const ModelState& state) {
  entry.entry_id = next_id();
  const fs::path dir = root_ / "entries" / entry.entry_id;
  const fs::path staging = root_ / "entries" / ("." + entry.entry_id + ".tmp");
  fs::remove_all(staging);
  fs::create_directories(staging / "checkpoint");
  fs::create_directories(staging / "portable");
  io::write_file_atomic(staging / "checkpoint" / "state.bin", pack_checkpoint(state, entry.trial_index));
  io::write_json_atomic(staging / "checkpoint" / "config.json", to_json(entry.config));
  if (state.manifold) save_manifold(staging / "portable" / "manifold", *state.manifold);
  if (state.clusterer) save_clusterer(staging / "portable" / "clusterer", *state.clusterer);
  if (state.topic_model) topics::save_topic_model(staging / "portable" / "topics", *state.topic_model);
  entry.created_at = io::utc_timestamp();
  entry.checkpoint_path = dir / "checkpoint";
  entry.portable_path = dir / "portable";
  io::write_json_atomic(staging / "manifest.json", to_json(entry));
  // the entry becomes visible only once complete
  fs::rename(staging, dir);
  return entry;
}

RegistryEntry Registry::register_search(const TrialResult& trial, const ModelState& state, double threshold,
                                        const std::string& provider_fingerprint, const std::string& data_fingerprint) {
  if (!trial.dbcv_score) throw InvalidArgument("a failed trial cannot be registered");
  if (!(*trial.dbcv_score > threshold)) throw InvalidArgument("score does not exceed the registration threshold");
  const auto best = best_search_score();
  if (best && !(*trial.dbcv_score > *best)) throw InvalidArgument("score does not exceed the best registered score");
  RegistryEntry e;
  e.kind = "search";
  e.config = trial.config;
  e.dbcv_score = trial.dbcv_score;
  e.trial_index = trial.trial_index;
  e.n_topics = trial.n_topics;
  e.provider_fingerprint = provider_fingerprint;
  e.data_fingerprint = data_fingerprint;
  return write_entry(std::move(e), state);
}

RegistryEntry Registry::register_final(const TrialConfig& config, std::optional<double> dbcv_score,
                                       std::size_t n_topics, const ModelState& state,
                                       const std::string& provider_fingerprint, const std::string& data_fingerprint) {
  RegistryEntry e;
  e.kind = "final";
  e.config = config;
  e.dbcv_score = dbcv_score;
  e.n_topics = n_topics;
  e.provider_fingerprint = provider_fingerprint;
  e.data_fingerprint = data_fingerprint;
  return write_entry(std::move(e), state);
}

void Registry::set_serving(const std::string& entry_id) {
  if (!find(entry_id)) throw InvalidArgument("unknown registry entry: " + entry_id);
  io::write_json_atomic(root_ / "serving.json", {{"entry_id", entry_id}});
}

std::optional<std::string> Registry::serving() const {
  const auto path = root_ / "serving.json";
  if (!fs::exists(path)) return std::nullopt;
  return io::read_json(path).at("entry_id").get<std::string>();
}

std::vector<std::string> Registry::prune() {
  const auto all = entries();
  const auto serving_id = serving();
  std::optional<std::string> best_id;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& e : all) {
    if (e.kind == "search" && e.dbcv_score && *e.dbcv_score > best) {
      best = *e.dbcv_score;
      best_id = e.entry_id;
    }
  }
  std::vector<std::string> removed;
  for (const auto& e : all) {
    if (e.entry_id == best_id || e.entry_id == serving_id) continue;
    fs::remove_all(root_ / "entries" / e.entry_id);
    removed.push_back(e.entry_id);
  }
  return removed;
}

}  // namespace topicscope::optimizer
