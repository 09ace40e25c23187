#include "topicscope/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

#include "topicscope/io.hpp"

namespace topicscope::pipeline {

using nlohmann::json;

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  c.dir = base_dir.empty() ? fs::path(".") : base_dir;
  if (j.contains("dir")) {
    fs::path d = j.at("dir").get<std::string>();
    c.dir = d.is_absolute() ? d : c.dir / d;
  }
  if (const auto q = j.find("query"); q != j.end()) {
    c.query.keywords = q->value("keywords", c.query.keywords);
    c.query.pubyear_start = q->value("pubyear_start", c.query.pubyear_start);
    c.query.pubyear_end = q->value("pubyear_end", c.query.pubyear_end);
    c.query.language = q->value("language", c.query.language);
    c.query.pubstage = q->value("pubstage", c.query.pubstage);
  }
  if (const auto s = j.find("source"); s != j.end()) {
    if (s->contains("mock")) {
      fs::path m = s->at("mock").get<std::string>();
      c.source_mock = m.is_absolute() ? m : base_dir / m;
    }
    auto& cc = c.source;
    cc.base_url = s->value("base_url", cc.base_url);
    cc.api_key = s->value("api_key", cc.api_key);
    cc.requests_per_window = s->value("requests_per_window", cc.requests_per_window);
    cc.window_seconds = s->value("window_seconds", cc.window_seconds);
    cc.max_retries = s->value("max_retries", cc.max_retries);
    cc.backoff_initial_seconds = s->value("backoff_initial_seconds", cc.backoff_initial_seconds);
    cc.backoff_multiplier = s->value("backoff_multiplier", cc.backoff_multiplier);
    cc.page_size = s->value("page_size", cc.page_size);
  }
  if (const auto w = j.find("window"); w != j.end()) {
    if (w->contains("start")) c.window_start = Date::parse(w->at("start").get<std::string>());
    if (w->contains("end")) c.window_end = Date::parse(w->at("end").get<std::string>());
  }
  if (c.window_end < c.window_start) throw InvalidArgument("window end precedes its start");
  c.language = j.value("language", c.language);
  if (j.contains("provider")) c.provider = embed::provider_config_from_json(j.at("provider"));
  if (j.contains("search_space")) c.search_space = optimizer::search_space_from_json(j.at("search_space"));
  if (j.contains("optimizer")) c.optimizer = optimizer::optimizer_config_from_json(j.at("optimizer"));
  if (j.contains("representation")) {
    c.representation = topics::representation_config_from_json(j.at("representation"));
  }
  if (j.contains("registry")) c.registry = j.at("registry").get<std::string>();
  return c;
}

json to_json(const PipelineConfig& c) {
  return {{"dir", c.dir.string()},
          {"query",
           {{"keywords", c.query.keywords},
            {"pubyear_start", c.query.pubyear_start},
            {"pubyear_end", c.query.pubyear_end},
            {"language", c.query.language},
            {"pubstage", c.query.pubstage}}},
          {"window", {{"start", c.window_start.to_string()}, {"end", c.window_end.to_string()}}},
          {"language", c.language},
          {"provider", embed::to_json(c.provider)},
          {"search_space", optimizer::to_json(c.search_space)},
          {"optimizer", optimizer::to_json(c.optimizer)},
          {"representation", topics::to_json(c.representation)},
          {"registry", c.registry.string()}};
}

PipelineLock::PipelineLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] const auto w = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw std::runtime_error("cannot create lock file " + path_.string());
    long owner = 0;
    std::ifstream(path_) >> owner;
    if (owner > 0 && ::kill(static_cast<pid_t>(owner), 0) == -1 && errno == ESRCH) {
      fs::remove(path_);
      continue;
    }
    break;
  }
  throw LockHeld("pipeline directory is locked by another command: " + path_.string());
}

PipelineLock::~PipelineLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

fs::path corpus_path(const PipelineConfig& c) { return c.dir / "corpus.ndjson"; }
fs::path embeddings_base(const PipelineConfig& c) { return c.dir / "embeddings"; }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct CheckedEmbeddings {
  embed::EmbeddingMatrix matrix;
  std::string data_fingerprint;
};

std::string provider_fingerprint(const PipelineConfig& c) { return embed::make_provider(c.provider)->fingerprint(); }

// Embeddings must come from the current corpus file and the configured provider.
CheckedEmbeddings load_checked_embeddings(const PipelineConfig& c) {
  const fs::path side = fs::path(embeddings_base(c)).concat(".json");
  const fs::path bin = fs::path(embeddings_base(c)).concat(".f32");
  const json meta = io::read_json(side);
  if (!fs::exists(bin)) throw io::MissingArtifact(bin);
  const auto corpus_fp = io::file_fingerprint(corpus_path(c));
  if (meta.value("corpus_fingerprint", "") != corpus_fp) {
    throw FingerprintMismatch("embeddings were computed from a different corpus; rerun embed");
  }
  if (meta.value("provider_fingerprint", "") != provider_fingerprint(c)) {
    throw FingerprintMismatch("embeddings were computed with a different provider configuration; rerun embed");
  }
  const auto data_fp = io::file_fingerprint(bin);
  if (meta.value("data_fingerprint", "") != data_fp) {
    throw FingerprintMismatch("embedding array does not match its sidecar: " + bin.string());
  }
  return {embed::load_embeddings(embeddings_base(c)), data_fp};
}

json read_stage_summary(const fs::path& path, const std::string& embeddings_fp, const std::string& stage) {
  json s = io::read_json(path);
  if (s.value("embeddings_fingerprint", "") != embeddings_fp) {
    throw FingerprintMismatch(stage + " output was produced from different embeddings; rerun " + stage);
  }
  return s;
}

// Corpus texts in embedding row order.
std::vector<std::string> aligned_texts(const std::vector<corpus::DocumentRecord>& records,
                                       const std::vector<std::string>& row_ids) {
  std::map<std::string, const corpus::DocumentRecord*> by_doi;
  for (const auto& r : records) by_doi[r.doi] = &r;
  std::vector<std::string> texts;
  texts.reserve(row_ids.size());
  for (const auto& id : row_ids) {
    const auto it = by_doi.find(id);
    if (it == by_doi.end()) throw FingerprintMismatch("document " + id + " is missing from the corpus");
    texts.push_back(embed::embedding_input(*it->second));
  }
  return texts;
}

void write_project(const PipelineConfig& c, const json& fields) {
  const fs::path path = c.dir / "project.json";
  json p = fs::exists(path) ? io::read_json(path) : json::object();
  p.update(fields);
  io::write_json_atomic(path, p);
}

}  // namespace

json run_fetch(const PipelineConfig& c, fetch::Transport* transport) {
  const std::string query = corpus::build_query(c.query);
  std::unique_ptr<fetch::Transport> owned;
  if (!transport) {
    if (!c.source_mock.empty()) {
      owned = std::make_unique<fetch::FileTransport>(c.source_mock);
    } else {
      if (c.source.base_url.empty()) throw InvalidArgument("source.base_url or source.mock is required for fetch");
      std::string key = c.source.api_key;
      if (key.empty()) {
        if (const char* env = std::getenv("TOPICSCOPE_SOURCE_API_KEY")) key = env;
      }
      owned = std::make_unique<fetch::HttpTransport>(c.source.base_url, key);
    }
    transport = owned.get();
  }
  fetch::ClientConfig cfg = c.source;
  cfg.cursor_path = c.dir / "fetch_cursor.json";
  const fs::path raw = c.dir / "raw.ndjson";
  fs::create_directories(c.dir);

  // an unfinished cursor for the same query means we append; anything else starts over
  bool resume = false;
  if (fs::exists(cfg.cursor_path)) {
    const json cur = io::read_json(cfg.cursor_path);
    resume = cur.value("query", "") == query;
  }
  std::ofstream out(raw, resume ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + raw.string());
  const auto summary = fetch::fetch_documents(query, cfg, *transport, [&](const json& record) {
    out << record.dump() << '\n' << std::flush;
  });
  json errors = json::array();
  for (const auto& e : summary.errors) errors.push_back({{"id", e.id}, {"status", e.status}, {"message", e.message}});
  return {{"stage", "fetch"},
          {"query", query},
          {"records", summary.records},
          {"errors", errors},
          {"retries", summary.retries},
          {"suspended", summary.suspended},
          {"position", summary.position},
          {"total_ids", summary.total_ids},
          {"output", raw.string()}};
}

json run_clean(const PipelineConfig& c, const fs::path& input) {
  const fs::path in = input.empty() ? c.dir / "raw.ndjson" : input;
  if (!fs::exists(in)) throw io::MissingArtifact(in);
  const auto records = corpus::read_ndjson(in);
  const auto result = corpus::clean(records, c.window_start, c.window_end, c.language);
  corpus::write_ndjson(corpus_path(c), result.records);
  const json report = corpus::to_json(result.report);
  io::write_json_atomic(c.dir / "cleaning_report.json", report);
  return {{"stage", "clean"}, {"input", in.string()}, {"report", report}, {"output", corpus_path(c).string()}};
}

json run_embed(const PipelineConfig& c) {
  if (!fs::exists(corpus_path(c))) throw io::MissingArtifact(corpus_path(c));
  const auto records = corpus::read_ndjson(corpus_path(c));
  auto provider = embed::make_provider(c.provider);
  const auto m = embed::embed_documents(records, *provider);
  embed::save_embeddings(embeddings_base(c), m,
                         {{"corpus_fingerprint", io::file_fingerprint(corpus_path(c))},
                          {"provider_config", embed::to_json(c.provider)}});
  return {{"stage", "embed"}, {"rows", m.size()}, {"dim", m.dim()}, {"provider_fingerprint", m.provider_fingerprint}};
}

json run_optimize(const PipelineConfig& c) {
  const auto emb = load_checked_embeddings(c);
  optimizer::Registry registry(c.registry_dir());
  optimizer::SearchContext ctx;
  ctx.provider_fingerprint = emb.matrix.provider_fingerprint;
  ctx.data_fingerprint = emb.data_fingerprint;
  ctx.trial_log = c.dir / "optimize" / "trials.jsonl";
  ctx.timing_log = c.dir / "optimize" / "timings.jsonl";
  const auto outcome = optimizer::random_search(emb.matrix.values, c.search_space, c.optimizer, &registry, ctx);
  json best_so_far = json::array();
  for (const double v : outcome.best_so_far) best_so_far.push_back(finite_or_null(v));
  const json summary = {{"embeddings_fingerprint", emb.data_fingerprint},
                        {"best", optimizer::to_json(outcome.best)},
                        {"best_so_far", best_so_far},
                        {"registered_trials", outcome.registered_trials},
                        {"registered_entries", outcome.registered_entries},
                        {"validation_subset_size", outcome.subset.size()},
                        {"search_space", optimizer::to_json(c.search_space)},
                        {"optimizer", optimizer::to_json(c.optimizer)}};
  io::write_json_atomic(c.dir / "optimize" / "summary.json", summary);
  json out = summary;
  out["stage"] = "optimize";
  out.erase("search_space");
  return out;
}

json run_fit(const PipelineConfig& c) {
  const auto emb = load_checked_embeddings(c);
  const json opt = read_stage_summary(c.dir / "optimize" / "summary.json", emb.data_fingerprint, "optimize");
  const auto config = optimizer::trial_config_from_json(opt.at("best").at("config"));
  const auto m = optimizer::fit_structure(emb.matrix.values, config);
  const fs::path dir = c.dir / "fit";
  optimizer::save_manifold(dir / "manifold", m.manifold);
  optimizer::save_clusterer(dir / "clusterer", m.clusterer);
  io::write_i32(dir / "labels.i32", m.labels);
  const auto noise = std::count(m.labels.begin(), m.labels.end(), -1);
  const json summary = {{"embeddings_fingerprint", emb.data_fingerprint},
                        {"config", optimizer::to_json(config)},
                        {"n_topics", m.clusterer.n_clusters()},
                        {"noise_fraction", static_cast<double>(noise) / static_cast<double>(m.labels.size())},
                        {"dbcv_score", m.dbcv_score ? json(*m.dbcv_score) : json(nullptr)}};
  io::write_json_atomic(dir / "summary.json", summary);
  json out = summary;
  out["stage"] = "fit";
  return out;
}

json run_represent(const PipelineConfig& c) {
  const auto emb = load_checked_embeddings(c);
  const json fit = read_stage_summary(c.dir / "fit" / "summary.json", emb.data_fingerprint, "fit");
  optimizer::FinalModel m;
  m.manifold = optimizer::load_manifold(c.dir / "fit" / "manifold");
  m.clusterer = optimizer::load_clusterer(c.dir / "fit" / "clusterer");
  m.labels = io::read_i32(c.dir / "fit" / "labels.i32");
  m.reduced = m.manifold.training_layout;
  if (!fit.at("dbcv_score").is_null()) m.dbcv_score = fit.at("dbcv_score").get<double>();
  if (m.labels.size() != emb.matrix.size()) throw FingerprintMismatch("fit labels do not match the embeddings");

  const auto records = corpus::read_ndjson(corpus_path(c));
  const auto texts = aligned_texts(records, emb.matrix.row_ids);
  auto provider = embed::make_provider(c.provider);
  m.topic_model = topics::build_topic_model(texts, m.labels, emb.matrix.values, m.reduced, emb.matrix.row_ids,
                                            *provider, c.representation);
  optimizer::Registry registry(c.registry_dir());
  const auto entry = optimizer::register_serving(registry, m, provider->fingerprint(), emb.data_fingerprint);
  write_project(c, {{"serving_entry", entry.entry_id},
                    {"n_topics", m.topic_model.n_topics()},
                    {"n_documents", m.labels.size()},
                    {"window", {{"start", c.window_start.to_string()}, {"end", c.window_end.to_string()}}},
                    {"granularities", json::array()}});
  json sizes = json::array();
  for (const auto& t : m.topic_model.topics) sizes.push_back(t.size);
  return {{"stage", "represent"}, {"entry_id", entry.entry_id}, {"n_topics", m.topic_model.n_topics()}, {"sizes", sizes}};
}

dynamics::SeriesSet build_series(const std::vector<corpus::DocumentRecord>& records, const topics::TopicModel& model,
                                 int granularity, Date window_start, Date window_end) {
  std::map<std::string, Date> dates_by_doi;
  for (const auto& r : records) {
    if (r.pub_date) dates_by_doi[r.doi] = *r.pub_date;
  }
  std::vector<Date> dates;
  dates.reserve(model.document_ids.size());
  for (const auto& id : model.document_ids) {
    const auto it = dates_by_doi.find(id);
    if (it == dates_by_doi.end()) throw FingerprintMismatch("document " + id + " has no dated corpus record");
    dates.push_back(it->second);
  }
  std::vector<int> topic_ids;
  for (std::size_t t = 0; t < model.n_topics(); ++t) topic_ids.push_back(static_cast<int>(t));
  auto set = dynamics::bin_documents(dates, model.labels, granularity, window_start, window_end, topic_ids);
  dynamics::relative_and_rank(set);
  return set;
}

void write_series(const fs::path& dir, const dynamics::SeriesSet& set) {
  const std::string g = std::to_string(set.granularity_months);
  io::write_file_atomic(dir / ("g" + g + ".csv"), dynamics::to_csv(set));
  const fs::path index_path = dir / "index.json";
  json index = fs::exists(index_path) ? io::read_json(index_path) : json::object();
  index["window_start"] = set.window_start.to_string();
  index["window_end"] = set.window_end.to_string();
  index["series"][g] = {{"file", "g" + g + ".csv"}, {"bins", set.totals.size()}, {"totals", set.totals}};
  io::write_json_atomic(index_path, index);
}

dynamics::SeriesSet read_series(const fs::path& dir, int granularity) {
  const json index = io::read_json(dir / "index.json");
  const std::string g = std::to_string(granularity);
  if (!index.at("series").contains(g)) throw io::MissingArtifact(dir / ("g" + g + ".csv"));
  return dynamics::series_from_csv(io::read_file(dir / index.at("series").at(g).at("file").get<std::string>()),
                                   granularity, Date::parse(index.at("window_start").get<std::string>()),
                                   Date::parse(index.at("window_end").get<std::string>()));
}

json run_timeseries(const PipelineConfig& c) {
  optimizer::Registry registry(c.registry_dir());
  const auto serving = registry.serving();
  if (!serving) throw io::MissingArtifact(c.registry_dir() / "serving.json");
  const auto entry = registry.find(*serving);
  if (!entry) throw io::MissingArtifact(c.registry_dir() / "entries" / *serving);
  const auto model = topics::load_topic_model(entry->portable_path / "topics");
  const auto records = corpus::read_ndjson(corpus_path(c));
  json bins = json::object();
  for (const int g : kGranularities) {
    const auto set = build_series(records, model, g, c.window_start, c.window_end);
    write_series(entry->portable_path / "series", set);
    bins[std::to_string(g)] = set.totals.size();
  }
  write_project(c, {{"granularities", kGranularities}});
  return {{"stage", "timeseries"}, {"entry_id", *serving}, {"bins", bins}};
}

json run_prune(const PipelineConfig& c) {
  optimizer::Registry registry(c.registry_dir());
  return {{"stage", "prune-registry"}, {"removed", registry.prune()}};
}

json run_report(const PipelineConfig& c) {
  json out = {{"stage", "report"}};
  if (const auto raw = c.dir / "raw.ndjson"; fs::exists(raw)) {
    out["raw_corpus"] = corpus::to_json(corpus::corpus_stats(corpus::read_ndjson(raw)));
  }
  if (fs::exists(corpus_path(c))) {
    out["corpus"] = corpus::to_json(corpus::corpus_stats(corpus::read_ndjson(corpus_path(c))));
  }
  if (const auto rep = c.dir / "cleaning_report.json"; fs::exists(rep)) out["cleaning"] = io::read_json(rep);
  if (const auto log = c.dir / "optimize" / "trials.jsonl"; fs::exists(log)) {
    std::ifstream in(log);
    std::string line;
    json scores = json::array(), best_curve = json::array();
    std::size_t failures = 0;
    double best = -INFINITY;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto t = optimizer::trial_result_from_json(json::parse(line));
      failures += t.failed();
      scores.push_back(t.dbcv_score ? json(*t.dbcv_score) : json(nullptr));
      best = std::max(best, t.comparable());
      best_curve.push_back(finite_or_null(best));
    }
    out["trials"] = {{"count", scores.size()}, {"failures", failures}, {"scores", scores}, {"best_so_far", best_curve}};
  }
  if (fs::exists(c.registry_dir())) {
    optimizer::Registry registry(c.registry_dir());
    json entries = json::array();
    for (const auto& e : registry.entries()) entries.push_back(optimizer::to_json(e));
    out["registry"] = {{"entries", entries}, {"serving", registry.serving() ? json(*registry.serving()) : json(nullptr)}};
  }
  return out;
}

}  // namespace topicscope::pipeline
