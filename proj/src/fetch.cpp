#include "topicscope/fetch.hpp"

#include <cstdlib>
#include <thread>

#include "topicscope/http_client.hpp"
#include "topicscope/io.hpp"

namespace topicscope::fetch {

using nlohmann::json;

struct HttpTransport::Impl {
  http::Client client;
  Impl(const std::string& base, const std::string& key, double timeout)
      : client(base, timeout, {{"apiKey", key}, {"Accept", "application/json"}}) {}
};

HttpTransport::HttpTransport(std::string base_url, std::string api_key, double timeout_seconds)
    : impl_(std::make_unique<Impl>(base_url, api_key, timeout_seconds)) {}

HttpTransport::~HttpTransport() = default;

Response HttpTransport::get(const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& params) {
  auto r = impl_->client.get(path, params);
  return {r.status, r.status == 0 ? r.error : std::move(r.body), std::move(r.headers)};
}

FileTransport::FileTransport(const std::filesystem::path& path)
    : FileTransport(io::read_json(path)) {}

FileTransport::FileTransport(json fixture) : fixture_(std::move(fixture)) {}

Response FileTransport::get(const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& params) {
  transcript_.push_back(path);
  const auto& ids = fixture_.at("ids");
  if (path == "/search") {
    std::size_t start = 0, count = ids.size();
    for (const auto& [k, v] : params) {
      if (k == "start") start = std::stoul(v);
      if (k == "count") count = std::stoul(v);
    }
    json page = json::array();
    for (std::size_t i = start; i < ids.size() && i < start + count; ++i) page.push_back(ids[i]);
    return {200, json{{"total", ids.size()}, {"ids", page}}.dump(), {}};
  }
  const std::string prefix = "/abstract/";
  if (path.rfind(prefix, 0) != 0) return {404, R"({"error":"unknown path"})", {}};
  const std::string id = path.substr(prefix.size());

  if (auto q = fixture_.find("quota_after"); q != fixture_.end()) {
    if (abstract_requests_ >= q->get<std::size_t>()) {
      return {429, R"({"error":"quota exceeded"})", {{"X-ELS-Status", "QUOTA_EXCEEDED"}}};
    }
  }
  ++abstract_requests_;
  if (auto s = fixture_.find("status_script"); s != fixture_.end() && s->contains(id)) {
    const auto& script = (*s)[id];
    auto& pos = script_pos_[id];
    if (pos < script.size()) return {script[pos++].get<int>(), R"({"error":"scripted"})", {}};
  }
  const auto& records = fixture_.at("records");
  if (!records.contains(id)) return {404, R"({"error":"no such record"})", {}};
  return {200, records[id].dump(), {}};
}

RateLimiter::RateLimiter(std::size_t limit, std::chrono::duration<double> window)
    : limit_(limit), window_(window) {}

void RateLimiter::acquire() {
  if (limit_ == 0) return;
  auto now = std::chrono::steady_clock::now();
  while (!stamps_.empty() && now - stamps_.front() >= window_) stamps_.pop_front();
  if (stamps_.size() >= limit_) {
    const auto wake = stamps_.front() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(window_);
    std::this_thread::sleep_until(wake);
    stamps_.pop_front();
    now = std::chrono::steady_clock::now();
  }
  stamps_.push_back(now);
}

namespace {

bool quota_exhausted(const Response& r) {
  if (r.status != 429) return false;
  auto it = r.headers.find("X-ELS-Status");
  return it != r.headers.end() && it->second.find("QUOTA_EXCEEDED") != std::string::npos;
}

bool retryable(const Response& r) { return r.status == 0 || r.status == 429 || r.status >= 500; }

struct Cursor {
  std::string query;
  std::vector<std::string> ids;
  std::size_t position = 0;
};

void save_cursor(const std::filesystem::path& path, const Cursor& c) {
  if (path.empty()) return;
  io::write_json_atomic(path, {{"query", c.query}, {"ids", c.ids}, {"position", c.position}});
}

class Requester {
 public:
  Requester(const ClientConfig& cfg, Transport& t, FetchSummary& s)
      : cfg_(cfg),
        transport_(t),
        summary_(s),
        limiter_(cfg.requests_per_window, std::chrono::duration<double>(cfg.window_seconds)) {}

  Response get(const std::string& path, const std::vector<std::pair<std::string, std::string>>& params) {
    double backoff = cfg_.backoff_initial_seconds;
    for (int attempt = 0;; ++attempt) {
      limiter_.acquire();
      Response r = transport_.get(path, params);
      if (quota_exhausted(r) || !retryable(r) || attempt >= cfg_.max_retries) return r;
      ++summary_.retries;
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= cfg_.backoff_multiplier;
    }
  }

 private:
  const ClientConfig& cfg_;
  Transport& transport_;
  FetchSummary& summary_;
  RateLimiter limiter_;
};

}  // namespace

FetchSummary fetch_documents(const std::string& query, const ClientConfig& config,
                             Transport& transport, const RecordSink& sink) {
  FetchSummary summary;
  Requester req(config, transport, summary);
  Cursor cursor;
  bool resumed = false;

  if (!config.cursor_path.empty() && std::filesystem::exists(config.cursor_path)) {
    const json saved = io::read_json(config.cursor_path);
    if (saved.value("query", "") == query) {
      cursor.query = query;
      cursor.ids = saved.at("ids").get<std::vector<std::string>>();
      cursor.position = saved.at("position").get<std::size_t>();
      resumed = true;
    }
  }

  if (!resumed) {
    cursor.query = query;
    const std::size_t page = std::max<std::size_t>(config.page_size, 1);
    for (std::size_t start = 0;; start += page) {
      Response r = req.get("/search", {{"query", query},
                                       {"start", std::to_string(start)},
                                       {"count", std::to_string(page)}});
      if (quota_exhausted(r)) {
        summary.suspended = true;
        return summary;
      }
      if (r.status != 200) {
        throw std::runtime_error("search request failed with status " + std::to_string(r.status) +
                                 ": " + r.body);
      }
      const json body = json::parse(r.body);
      const auto& ids = body.at("ids");
      for (const auto& id : ids) cursor.ids.push_back(id.get<std::string>());
      if (ids.empty() || cursor.ids.size() >= body.at("total").get<std::size_t>()) break;
    }
    save_cursor(config.cursor_path, cursor);
  }

  summary.total_ids = cursor.ids.size();
  while (cursor.position < cursor.ids.size()) {
    const std::string& id = cursor.ids[cursor.position];
    Response r = req.get("/abstract/" + id, {});
    if (quota_exhausted(r)) {
      summary.suspended = true;
      break;
    }
    if (r.status == 200) {
      try {
        sink(json::parse(r.body));
        ++summary.records;
      } catch (const json::parse_error& e) {
        summary.errors.push_back({id, r.status, std::string("malformed record: ") + e.what()});
      }
    } else {
      summary.errors.push_back({id, r.status, r.body});
    }
    ++cursor.position;
    save_cursor(config.cursor_path, cursor);
  }
  summary.position = cursor.position;
  return summary;
}

}  // namespace topicscope::fetch
