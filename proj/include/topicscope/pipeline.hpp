#pragma once

// End-to-end stages over one pipeline directory. Every stage reads the
// artifacts of the stage before it, checks their fingerprints, and writes its
// own outputs atomically.
//
// Layout of a pipeline directory:
//   raw.ndjson, fetch_cursor.json            fetch
//   corpus.ndjson, cleaning_report.json      clean
//   embeddings.f32, embeddings.json          embed
//   optimize/{trials,timings}.jsonl, optimize/summary.json
//   fit/{manifold,clusterer}/, fit/summary.json
//   registry/                                 registered models; represent sets the serving entry
//   <serving entry>/portable/series/         timeseries

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "topicscope/common.hpp"
#include "topicscope/corpus.hpp"
#include "topicscope/dynamics.hpp"
#include "topicscope/embed.hpp"
#include "topicscope/fetch.hpp"
#include "topicscope/optimizer.hpp"
#include "topicscope/topics.hpp"

namespace topicscope::pipeline {

namespace fs = std::filesystem;

/// An upstream artifact was produced from different inputs or settings.
class FingerprintMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Another command holds the pipeline directory.
class LockHeld : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  fs::path dir = ".";
  corpus::SourceQuery query;
  fs::path source_mock;  // file-backed source; empty = HTTP source
  fetch::ClientConfig source;
  Date window_start{2006, 1, 1};
  Date window_end{2023, 12, 31};
  std::string language = "English";
  embed::ProviderConfig provider;
  optimizer::SearchSpace search_space;
  optimizer::OptimizerConfig optimizer;
  topics::RepresentationConfig representation;
  fs::path registry = "registry";

  fs::path path(const fs::path& relative) const { return relative.is_absolute() ? relative : dir / relative; }
  fs::path registry_dir() const { return path(registry); }
};

/// Relative paths inside the file resolve against `base_dir`; `dir` defaults to it.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base_dir);
nlohmann::json to_json(const PipelineConfig& c);

/// Exclusive lock file (`.lock` holding the owner pid). A lock left by a dead
/// process is taken over.
class PipelineLock {
 public:
  explicit PipelineLock(const fs::path& dir);
  ~PipelineLock();
  PipelineLock(const PipelineLock&) = delete;
  PipelineLock& operator=(const PipelineLock&) = delete;

 private:
  fs::path path_;
};

nlohmann::json run_fetch(const PipelineConfig& c, fetch::Transport* transport = nullptr);
/// Reads `input` (default raw.ndjson) and writes corpus.ndjson.
nlohmann::json run_clean(const PipelineConfig& c, const fs::path& input = {});
nlohmann::json run_embed(const PipelineConfig& c);
nlohmann::json run_optimize(const PipelineConfig& c);
nlohmann::json run_fit(const PipelineConfig& c);
nlohmann::json run_represent(const PipelineConfig& c);
nlohmann::json run_timeseries(const PipelineConfig& c);
nlohmann::json run_prune(const PipelineConfig& c);
nlohmann::json run_report(const PipelineConfig& c);

inline constexpr int kGranularities[] = {1, 3, 6, 12};

/// series/g<months>.csv plus series/index.json.
void write_series(const fs::path& dir, const dynamics::SeriesSet& set);
dynamics::SeriesSet read_series(const fs::path& dir, int granularity_months);

/// Builds the series of one labelling from the corpus dates, aligned by DOI.
dynamics::SeriesSet build_series(const std::vector<corpus::DocumentRecord>& corpus,
                                 const topics::TopicModel& model, int granularity_months, Date window_start,
                                 Date window_end);

}  // namespace topicscope::pipeline
