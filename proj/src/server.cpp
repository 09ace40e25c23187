#include "topicscope/server.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "httplib.h"
#include "topicscope/io.hpp"
#include "topicscope/optimizer.hpp"

namespace topicscope::server {

using nlohmann::json;

ServerConfig server_config_from_json(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    fs::path path = p;
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  ServerConfig c;
  c.base_dir = base_dir;
  for (const auto& p : j.value("projects", json::array())) {
    ProjectConfig pc;
    pc.project_id = p.at("project_id").get<std::string>();
    pc.name = p.value("name", pc.project_id);
    pc.config = resolve(p.at("config").get<std::string>());
    c.projects.push_back(std::move(pc));
  }
  c.resolvers = j.value("resolvers", json::array());
  if (j.contains("static_dir")) c.static_dir = resolve(j.at("static_dir").get<std::string>());
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  return c;
}

ServerConfig load_server_config(const fs::path& path) {
  return server_config_from_json(io::read_json(path), path.parent_path());
}

json LoadedProject::descriptor() const {
  json grans = json::array();
  for (const auto& [g, _] : series) grans.push_back(g);
  return {{"project_id", config.project_id},
          {"name", config.name},
          {"corpus_path", (pipeline.dir / "corpus.ndjson").string()},
          {"serving_entry", serving_entry},
          {"n_topics", model.n_topics()},
          {"n_documents", model.labels.size()},
          {"window", {{"start", pipeline.window_start.to_string()}, {"end", pipeline.window_end.to_string()}}},
          {"granularities", grans}};
}

std::shared_ptr<LoadedProject> load_project(const ProjectConfig& config) {
  auto p = std::make_shared<LoadedProject>();
  p->config = config;
  p->pipeline = pipeline::pipeline_config_from_json(io::read_json(config.config), config.config.parent_path());

  optimizer::Registry registry(p->pipeline.registry_dir());
  const auto serving = registry.serving();
  if (!serving) throw io::MissingArtifact(p->pipeline.registry_dir() / "serving.json");
  const auto entry = registry.find(*serving);
  if (!entry) throw io::MissingArtifact(p->pipeline.registry_dir() / "entries" / *serving);
  p->serving_entry = entry->entry_id;
  p->model = topics::load_topic_model(entry->portable_path / "topics");
  p->provider = embed::make_provider(p->pipeline.provider);
  if (p->provider->fingerprint() != p->model.provider_fingerprint) {
    throw pipeline::FingerprintMismatch("project " + config.project_id +
                                        ": configured provider differs from the one the model was built with");
  }

  const auto records = corpus::read_ndjson(p->pipeline.dir / "corpus.ndjson");
  for (const int g : pipeline::kGranularities) {
    try {
      p->series.emplace(g, pipeline::read_series(entry->portable_path / "series", g));
    } catch (const io::MissingArtifact&) {
      p->series.emplace(g, pipeline::build_series(records, p->model, g, p->pipeline.window_start,
                                                  p->pipeline.window_end));
    }
  }

  const auto layout = optimizer::load_manifold(entry->portable_path / "manifold").training_layout;
  if (layout.rows() != p->model.labels.size()) {
    throw pipeline::FingerprintMismatch("project " + config.project_id + ": layout and labels disagree");
  }
  std::map<std::string, const corpus::DocumentRecord*> by_doi;
  for (const auto& r : records) by_doi[r.doi] = &r;
  p->documents.resize(p->model.n_topics());
  for (std::size_t i = 0; i < p->model.labels.size(); ++i) {
    const int t = p->model.labels[i];
    if (t < 0) continue;
    const auto& topic = p->model.topics[static_cast<std::size_t>(t)];
    DocumentRow row;
    row.doi = p->model.document_ids[i];
    if (const auto it = by_doi.find(row.doi); it != by_doi.end()) {
      row.title = it->second->title;
      if (it->second->pub_date) row.pub_date = it->second->pub_date->to_string();
    }
    row.probability = topics::assignment_probability(layout.row(i), topic.reduced_centroid, topic.spread);
    p->documents[static_cast<std::size_t>(t)].push_back(std::move(row));
  }

  if (p->model.n_topics() >= 2) {
    Matrix centroids(p->model.n_topics(), p->model.topics[0].centroid.size());
    std::vector<std::size_t> sizes;
    for (std::size_t t = 0; t < p->model.n_topics(); ++t) {
      std::copy(p->model.topics[t].centroid.begin(), p->model.topics[t].centroid.end(), centroids.row(t).begin());
      sizes.push_back(p->model.topics[t].size);
    }
    p->map = topics::intertopic_map(centroids, sizes);
  }
  return p;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (const char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

namespace {

struct ApiError {
  int status;
  std::string code;
  std::string message;
  json details = json::object();
};

std::string status_code_name(int status) {
  switch (status) {
    case 400: return "bad_request";
    case 404: return "not_found";
    case 405: return "method_not_allowed";
    case 409: return "conflict";
    case 422: return "unprocessable";
    case 502: return "bad_gateway";
    case 503: return "unavailable";
    default: return "internal";
  }
}

[[noreturn]] void fail(int status, std::string message, json details = json::object()) {
  throw ApiError{status, status_code_name(status), std::move(message), std::move(details)};
}

Response reply(int status, std::string body, std::string content_type = "application/json") {
  Response r;
  r.status = status;
  r.body = std::move(body);
  r.content_type = std::move(content_type);
  return r;
}

Response error_response(const ApiError& e) {
  return reply(e.status, json{{"code", e.code}, {"message", e.message}, {"details", e.details}}.dump());
}

std::optional<std::string> param(const Params& params, const std::string& key) {
  const auto it = params.find(key);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

long parse_long(const std::string& key, const std::string& text) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) fail(400, key + " must be an integer", {{key, text}});
  return v;
}

bool parse_flag(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(400, key + " must be true or false", {{key, text}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : path) {
    if (ch == '/') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

json term_list(const std::vector<topics::TermWeight>& terms, std::size_t k) {
  json out = json::array();
  for (std::size_t i = 0; i < std::min(k, terms.size()); ++i) {
    out.push_back({{"term", terms[i].term}, {"weight", terms[i].weight}});
  }
  return out;
}

json preview(const topics::TopicRepresentation& t, std::size_t k = 5) {
  const auto& terms = t.mmr_terms.empty() ? t.top_terms : t.mmr_terms;
  json out = json::array();
  for (std::size_t i = 0; i < std::min(k, terms.size()); ++i) out.push_back(terms[i].term);
  return out;
}

constexpr const char* kSimilarityMethod = "cosine similarity to topic centroids in embedding space";

json rank_topics(const LoadedProject& p, std::span<const double> query, std::size_t k) {
  std::vector<std::pair<double, int>> scored;
  for (const auto& t : p.model.topics) {
    scored.emplace_back(std::clamp(cosine(query, t.centroid), -1.0, 1.0), t.topic_id);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  json hits = json::array();
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) {
    const auto& t = p.model.topics[static_cast<std::size_t>(scored[i].second)];
    hits.push_back({{"topic_id", t.topic_id}, {"similarity", scored[i].first}, {"terms", preview(t)}});
  }
  return hits;
}

std::vector<double> embed_or_unavailable(const LoadedProject& p, const std::string& text) {
  try {
    return embed::embed_query(text, *p.provider);
  } catch (const std::exception& e) {
    fail(503, "embedding provider unavailable", {{"reason", e.what()}});
  }
}

std::size_t hit_count(const Params& params) {
  const auto k = param(params, "k");
  if (!k) return 10;
  const long v = parse_long("k", *k);
  if (v < 1) fail(400, "k must be positive", {{"k", v}});
  return static_cast<std::size_t>(v);
}

const topics::TopicRepresentation& topic_of(const LoadedProject& p, const std::string& segment) {
  long t = -1;
  const auto [ptr, ec] = std::from_chars(segment.data(), segment.data() + segment.size(), t);
  if (ec != std::errc() || ptr != segment.data() + segment.size() || t < 0 ||
      static_cast<std::size_t>(t) >= p.model.n_topics()) {
    fail(404, "unknown topic", {{"topic", segment}});
  }
  return p.model.topics[static_cast<std::size_t>(t)];
}

int granularity_of(const std::string& text) {
  const long g = parse_long("granularity", text);
  if (!dynamics::valid_granularity(static_cast<int>(g))) {
    fail(400, "granularity must be one of 1, 3, 6, 12", {{"granularity", g}});
  }
  return static_cast<int>(g);
}

json ok_object(const LoadedProject& p, json body) {
  body["serving_entry"] = p.serving_entry;
  return body;
}

Response get_topics(const LoadedProject& p, const Params& params) {
  const auto sort = param(params, "sort").value_or("size");
  if (sort != "size" && sort != "id") fail(400, "sort must be size or id", {{"sort", sort}});
  std::size_t limit = p.model.n_topics();
  if (const auto l = param(params, "limit")) {
    const long v = parse_long("limit", *l);
    if (v < 0) fail(400, "limit must not be negative", {{"limit", v}});
    limit = std::min(limit, static_cast<std::size_t>(v));
  }
  std::vector<const topics::TopicRepresentation*> order;
  for (const auto& t : p.model.topics) order.push_back(&t);
  if (sort == "size") {
    std::stable_sort(order.begin(), order.end(), [](auto a, auto b) { return a->size > b->size; });
  }
  json items = json::array();
  for (std::size_t i = 0; i < limit; ++i) {
    const auto& t = *order[i];
    items.push_back({{"topic_id", t.topic_id},
                     {"size", t.size},
                     {"top_terms", term_list(t.top_terms, 10)},
                     {"keywords", preview(t, t.mmr_terms.size())},
                     {"wordcloud", term_list(topics::wordcloud_export(t, t.top_terms.size()), t.top_terms.size())}});
  }
  return reply(200, ok_object(p, {{"topics", items}, {"sort", sort}}).dump());
}

Response get_search(const LoadedProject& p, const Params& params) {
  const auto q = param(params, "q").value_or("");
  if (q.find_first_not_of(" \t\r\n") == std::string::npos) fail(400, "query must not be empty");
  const std::size_t k = hit_count(params);
  const auto v = embed_or_unavailable(p, q);
  return reply(200, ok_object(p, {{"query", q}, {"method", kSimilarityMethod}, {"hits", rank_topics(p, v, k)}}).dump());
}

Response get_doi(const LoadedProject& p, const Params& params,
                 const std::vector<std::unique_ptr<resolver::Resolver>>& resolvers) {
  const auto doi = param(params, "doi").value_or("");
  if (!resolver::valid_doi(doi)) fail(400, "malformed DOI", {{"doi", doi}});
  const std::size_t k = hit_count(params);
  const auto res = resolver::resolve_chain(resolvers, doi);
  if (!res.found) {
    if (res.all_failed) fail(502, "every external service failed", {{"doi", doi}, {"failures", res.failures}});
    fail(404, "DOI could not be resolved", {{"doi", doi}, {"failures", res.failures}});
  }
  const auto& found = *res.found;
  if (found.abstract.find_first_not_of(" \t\r\n") == std::string::npos) {
    fail(422, "resolved record has an empty abstract", {{"doi", doi}, {"source", found.source}});
  }
  corpus::DocumentRecord record;
  record.title = found.title;
  record.abstract = found.abstract;
  // an untitled record still embeds, from its abstract alone
  const auto v = embed_or_unavailable(p, found.title.empty() ? found.abstract : embed::embedding_input(record));
  return reply(200, ok_object(p, {{"resolved", {{"doi", found.doi}, {"title", found.title}, {"source", found.source}}},
                             {"method", kSimilarityMethod},
                             {"hits", rank_topics(p, v, k)}})
                   .dump());
}

Response get_timeseries(const LoadedProject& p, const topics::TopicRepresentation& t, const Params& params) {
  const int g = granularity_of(param(params, "granularity").value_or("12"));
  const bool relative = parse_flag("relative", param(params, "relative").value_or("false"));
  const auto& set = p.series.at(g);
  const auto it = set.series.find(t.topic_id);
  if (it == set.series.end()) fail(404, "no series for topic", {{"topic", t.topic_id}});
  json body = dynamics::to_json(it->second, relative);
  body["relative"] = relative;
  body["totals"] = set.totals;
  return reply(200, ok_object(p, std::move(body)).dump());
}

Response post_test(const LoadedProject& p, const topics::TopicRepresentation& t, const std::string& text) {
  json body;
  try {
    body = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(400, "request body is not valid JSON", {{"reason", e.what()}});
  }
  if (!body.is_object() || !body.contains("intervals") || !body.at("intervals").is_array()) {
    fail(400, "body needs an intervals array");
  }
  try {
    const int g = body.contains("granularity") ? granularity_of(std::to_string(body.at("granularity").get<long>())) : 12;
    const auto& set = p.series.at(g);
    const double alpha = body.value("alpha", 0.05);
    const bool use_relative = body.value("use_relative", true);
    const auto correction = dynamics::correction_from_string(body.value("correction", std::string("holm")));
    if (!(alpha > 0.0 && alpha < 1.0)) fail(400, "alpha must lie in (0, 1)", {{"alpha", alpha}});

    auto to_bin = [&](const json& iv, const char* bin_key, const char* date_key) -> std::size_t {
      if (iv.contains(bin_key)) {
        const long b = iv.at(bin_key).get<long>();
        if (b < 0) fail(400, "interval bins must not be negative", {{bin_key, b}});
        return static_cast<std::size_t>(b);
      }
      const auto d = Date::parse(iv.at(date_key).get<std::string>());
      if (d < set.window_start || set.window_end < d) {
        fail(400, "interval date outside the corpus window", {{date_key, d.to_string()}});
      }
      return dynamics::bin_index(set.window_start, g, d);
    };
    std::vector<dynamics::IntervalSpec> intervals;
    for (const auto& iv : body.at("intervals")) {
      intervals.push_back({to_bin(iv, "start_bin", "start"), to_bin(iv, "end_bin", "end")});
    }
    const auto cmp = dynamics::compare_intervals(set.series.at(t.topic_id), intervals, alpha, use_relative, correction);
    json out = dynamics::to_json(cmp.omnibus);
    out["topic_id"] = t.topic_id;
    out["granularity_months"] = g;
    out["use_relative"] = use_relative;
    if (cmp.pairwise) out["pairwise"] = dynamics::to_json(*cmp.pairwise);
    return reply(200, ok_object(p, std::move(out)).dump());
  } catch (const json::exception& e) {
    fail(400, "malformed test request", {{"reason", e.what()}});
  } catch (const std::invalid_argument& e) {
    fail(400, e.what());
  }
}

Response get_documents(const LoadedProject& p, const topics::TopicRepresentation& t, const Params& params) {
  const auto format = param(params, "format").value_or("csv");
  const auto& rows = p.documents[static_cast<std::size_t>(t.topic_id)];
  if (format == "json") {
    json docs = json::array();
    for (const auto& r : rows) {
      docs.push_back({{"doi", r.doi}, {"title", r.title}, {"pub_date", r.pub_date}, {"probability", r.probability}});
    }
    return reply(200, ok_object(p, {{"topic_id", t.topic_id}, {"documents", docs}}).dump());
  }
  if (format != "csv") fail(400, "format must be csv or json", {{"format", format}});
  std::ostringstream out;
  out.precision(17);
  out << "doi,title,pub_date,probability\r\n";
  for (const auto& r : rows) {
    out << csv_field(r.doi) << ',' << csv_field(r.title) << ',' << r.pub_date << ',' << r.probability << "\r\n";
  }
  return reply(200, out.str(), "text/csv; charset=utf-8");
}

Response get_map(const LoadedProject& p) {
  if (p.model.n_topics() < 2) fail(409, "the intertopic map needs at least two topics", {{"n_topics", p.model.n_topics()}});
  json points = json::array();
  for (const auto& m : p.map) {
    points.push_back({{"topic_id", m.topic_id},
                      {"x", m.x},
                      {"y", m.y},
                      {"size", m.size},
                      {"terms", preview(p.model.topics[static_cast<std::size_t>(m.topic_id)])}});
  }
  return reply(200, ok_object(p, {{"points", points}}).dump());
}

}  // namespace

Api::Api(const ServerConfig& config) {
  for (const auto& pc : config.projects) {
    if (configs_.count(pc.project_id)) throw InvalidArgument("duplicate project id " + pc.project_id);
    order_.push_back(pc.project_id);
    configs_[pc.project_id] = pc;
    projects_[pc.project_id] = load_project(pc);
  }
  for (const auto& r : config.resolvers) resolvers_.push_back(resolver::make_resolver(r, config.base_dir));
}

void Api::reload(const std::string& project_id) {
  const auto it = configs_.find(project_id);
  if (it == configs_.end()) throw InvalidArgument("unknown project " + project_id);
  install(load_project(it->second));
}

void Api::install(std::shared_ptr<const LoadedProject> project) {
  std::lock_guard lock(mutex_);
  const auto& id = project->config.project_id;
  if (!projects_.count(id)) {
    order_.push_back(id);
    configs_[id] = project->config;
  }
  projects_[id] = std::move(project);
}

std::shared_ptr<const LoadedProject> Api::project(const std::string& project_id) const {
  std::lock_guard lock(mutex_);
  const auto it = projects_.find(project_id);
  return it == projects_.end() ? nullptr : it->second;
}

Response Api::handle(const std::string& method, const std::string& path, const Params& params,
                     const std::string& body) const {
  std::shared_ptr<const LoadedProject> p;
  try {
    const auto seg = split_path(path);
    if (seg.empty() || seg[0] != "projects") fail(404, "no such route", {{"path", path}});
    auto require = [&](const char* m) {
      if (method != m) fail(405, "method not allowed", {{"method", method}, {"path", path}});
    };
    if (seg.size() == 1) {
      require("GET");
      std::vector<std::shared_ptr<const LoadedProject>> snapshot;
      {
        std::lock_guard lock(mutex_);
        for (const auto& id : order_) snapshot.push_back(projects_.at(id));
      }
      json list = json::array();
      for (const auto& sp : snapshot) list.push_back(sp->descriptor());
      return reply(200, list.dump());
    }
    p = project(seg[1]);
    if (!p) fail(404, "unknown project", {{"project", seg[1]}});
    Response r;
    if (seg.size() == 3 && seg[2] == "topics") {
      require("GET");
      r = get_topics(*p, params);
    } else if (seg.size() == 3 && seg[2] == "search") {
      require("GET");
      r = get_search(*p, params);
    } else if (seg.size() == 4 && seg[2] == "search" && seg[3] == "doi") {
      require("GET");
      r = get_doi(*p, params, resolvers_);
    } else if (seg.size() == 3 && seg[2] == "map") {
      require("GET");
      r = get_map(*p);
    } else if (seg.size() == 5 && seg[2] == "topics") {
      const auto& t = topic_of(*p, seg[3]);
      if (seg[4] == "timeseries") {
        require("GET");
        r = get_timeseries(*p, t, params);
      } else if (seg[4] == "test") {
        require("POST");
        r = post_test(*p, t, body);
      } else if (seg[4] == "documents") {
        require("GET");
        r = get_documents(*p, t, params);
      } else {
        fail(404, "no such route", {{"path", path}});
      }
    } else {
      fail(404, "no such route", {{"path", path}});
    }
    r.serving_entry = p->serving_entry;
    return r;
  } catch (const ApiError& e) {
    auto r = error_response(e);
    if (p) r.serving_entry = p->serving_entry;
    return r;
  } catch (const std::exception& e) {
    auto r = error_response({500, "internal", e.what()});
    if (p) r.serving_entry = p->serving_entry;
    return r;
  }
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Api& api, const fs::path& static_dir) : impl_(std::make_unique<Impl>()) {
  auto forward = [&api](const httplib::Request& req, httplib::Response& res) {
    Params params(req.params.begin(), req.params.end());
    const auto r = api.handle(req.method, req.path, params, req.body);
    res.status = r.status;
    if (!r.serving_entry.empty()) res.set_header("X-Serving-Entry", r.serving_entry);
    res.set_content(r.body, r.content_type);
  };
  impl_->server.Get("/projects(/.*)?", forward);
  impl_->server.Post("/projects(/.*)?", forward);
  if (!static_dir.empty()) impl_->server.set_mount_point("/", static_dir.string());
  impl_->server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_content(json{{"code", status_code_name(res.status)},
                         {"message", httplib::status_message(res.status)},
                         {"details", {{"path", req.path}}}}
                        .dump(),
                    "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace topicscope::server
