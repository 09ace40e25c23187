#pragma once

// Resumable harvesting client for a search + per-document retrieval API.
//
// Wire protocol (relative to the configured base URL, `apiKey` request header):
//   GET /search?query=Q&start=S&count=C  -> {"total": N, "ids": ["..."]}
//   GET /abstract/{id}                   -> raw record JSON object
// HTTP 429 carrying `X-ELS-Status: QUOTA_EXCEEDED` means the request quota is
// spent: the run suspends and leaves its cursor on disk. Any other 429 or 5xx
// is retried with exponential backoff.

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

namespace topicscope::fetch {

struct Response {
  int status = 0;  // 0 = transport failure (no HTTP response)
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Issues GET requests against the source API.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Response get(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& params) = 0;
};

/// cpp-httplib backed transport.
class HttpTransport : public Transport {
 public:
  HttpTransport(std::string base_url, std::string api_key, double timeout_seconds = 30.0);
  ~HttpTransport() override;
  Response get(const std::string& path,
               const std::vector<std::pair<std::string, std::string>>& params) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// File-backed mock of the source API, for offline runs and tests.
///
/// File layout: {"ids": [...], "records": {id: {...}},
///               "status_script": {id: [429, 500, ...]},  // served before success
///               "quota_after": N}                          // abstract requests allowed
class FileTransport : public Transport {
 public:
  explicit FileTransport(const std::filesystem::path& path);
  explicit FileTransport(nlohmann::json fixture);
  Response get(const std::string& path,
               const std::vector<std::pair<std::string, std::string>>& params) override;

  /// Request paths served so far, in order.
  const std::vector<std::string>& transcript() const { return transcript_; }

 private:
  nlohmann::json fixture_;
  std::map<std::string, std::size_t> script_pos_;
  std::size_t abstract_requests_ = 0;
  std::vector<std::string> transcript_;
};

struct ClientConfig {
  std::string base_url;
  std::string api_key;  // falls back to $TOPICSCOPE_SOURCE_API_KEY when empty
  std::size_t requests_per_window = 9;
  double window_seconds = 1.0;
  int max_retries = 3;
  double backoff_initial_seconds = 0.5;
  double backoff_multiplier = 2.0;
  std::size_t page_size = 25;
  std::filesystem::path cursor_path;  // empty = not resumable
};

/// Sliding-window limiter: at most `limit` acquisitions per `window`.
class RateLimiter {
 public:
  RateLimiter(std::size_t limit, std::chrono::duration<double> window);
  void acquire();

 private:
  std::size_t limit_;
  std::chrono::duration<double> window_;
  std::deque<std::chrono::steady_clock::time_point> stamps_;
};

struct FetchError {
  std::string id;
  int status = 0;
  std::string message;
};

struct FetchSummary {
  std::size_t records = 0;
  std::vector<FetchError> errors;
  std::size_t retries = 0;
  bool suspended = false;  // quota exhausted; rerun with the same cursor to resume
  std::size_t position = 0;
  std::size_t total_ids = 0;
};

using RecordSink = std::function<void(const nlohmann::json& raw)>;

/// Streams raw records to `sink`, one retrieval per identifier. When a cursor
/// path is configured, progress is persisted after every identifier and a
/// matching cursor (same query) is resumed instead of searching again.
FetchSummary fetch_documents(const std::string& query, const ClientConfig& config,
                             Transport& transport, const RecordSink& sink);

}  // namespace topicscope::fetch
