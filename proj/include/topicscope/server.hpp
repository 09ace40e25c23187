#pragma once

// JSON API over the serving model of each configured project.
//
// Every response names the serving registry entry (X-Serving-Entry header, and
// "serving_entry" in object bodies). Errors are {code, message, details}.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicscope/dynamics.hpp"
#include "topicscope/embed.hpp"
#include "topicscope/pipeline.hpp"
#include "topicscope/resolver.hpp"
#include "topicscope/topics.hpp"

namespace topicscope::server {

namespace fs = std::filesystem;

struct ProjectConfig {
  std::string project_id;
  std::string name;
  fs::path config;  // pipeline config file
};

struct ServerConfig {
  std::vector<ProjectConfig> projects;
  nlohmann::json resolvers = nlohmann::json::array();  // tried in order
  fs::path base_dir;
  fs::path static_dir;  // served under / when set
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Relative paths resolve against `base_dir`.
ServerConfig server_config_from_json(const nlohmann::json& j, const fs::path& base_dir);
ServerConfig load_server_config(const fs::path& path);

struct DocumentRow {
  std::string doi;
  std::string title;
  std::string pub_date;
  double probability = 0.0;
};

/// Everything one project serves. Built once, never mutated afterwards.
struct LoadedProject {
  ProjectConfig config;
  pipeline::PipelineConfig pipeline;
  std::string serving_entry;
  topics::TopicModel model;
  std::map<int, dynamics::SeriesSet> series;  // by granularity
  std::vector<std::vector<DocumentRow>> documents;  // by topic
  std::vector<topics::MapPoint> map;  // empty below two topics
  std::unique_ptr<embed::Provider> provider;

  nlohmann::json descriptor() const;
};

/// Loads the serving entry of the project's registry. The configured provider
/// must match the one the model was built with.
std::shared_ptr<LoadedProject> load_project(const ProjectConfig& config);

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::string serving_entry;
};

using Params = std::multimap<std::string, std::string>;

/// Transport-free request handling; the HTTP layer only forwards to it.
class Api {
 public:
  explicit Api(const ServerConfig& config);

  /// Loads a fresh model for the project and swaps it in; requests already in
  /// flight keep the model they started with.
  void reload(const std::string& project_id);
  void install(std::shared_ptr<const LoadedProject> project);
  std::shared_ptr<const LoadedProject> project(const std::string& project_id) const;

  Response handle(const std::string& method, const std::string& path, const Params& params,
                  const std::string& body) const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, ProjectConfig> configs_;
  std::map<std::string, std::shared_ptr<const LoadedProject>> projects_;
  mutable std::mutex mutex_;
  std::vector<std::unique_ptr<resolver::Resolver>> resolvers_;
};

/// CSV field quoting: fields holding a comma, quote or line break are quoted
/// with inner quotes doubled.
std::string csv_field(const std::string& value);

class HttpServer {
 public:
  HttpServer(Api& api, const fs::path& static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 = any free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace topicscope::server
