#include "topicscope/resolver.hpp"

#include <cstdlib>
#include <regex>

#include "topicscope/http_client.hpp"
#include "topicscope/io.hpp"

namespace topicscope::resolver {

using nlohmann::json;

bool valid_doi(const std::string& doi) {
  static const std::regex pattern(R"(^10\.\d{4,9}/\S+$)");
  return std::regex_match(doi, pattern);
}

FileResolver::FileResolver(std::string name, const std::filesystem::path& path)
    : FileResolver(std::move(name), io::read_json(path)) {}

FileResolver::FileResolver(std::string name, json fixture) : name_(std::move(name)), fixture_(std::move(fixture)) {}

std::optional<ResolvedAbstract> FileResolver::resolve(const std::string& doi) {
  if (fixture_.value("failing", false)) throw ServiceError(name_ + " is unavailable");
  const auto& records = fixture_.at("records");
  const auto it = records.find(doi);
  if (it == records.end()) return std::nullopt;
  return ResolvedAbstract{doi, it->value("title", std::string()), it->value("abstract", std::string()), name_};
}

HttpResolver::HttpResolver(HttpResolverConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw std::invalid_argument("resolver " + config_.name + " needs a base_url");
}

std::optional<ResolvedAbstract> HttpResolver::resolve(const std::string& doi) {
  std::map<std::string, std::string> headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) headers[config_.api_key_header] = key;
  }
  std::string path = config_.path_template;
  if (const auto pos = path.find("{doi}"); pos != std::string::npos) path.replace(pos, 5, http::url_encode(doi));
  http::Client client(config_.base_url, config_.timeout_seconds, headers);
  const auto r = client.get(path);
  if (r.status == 404) return std::nullopt;
  if (r.status < 200 || r.status >= 300) {
    throw ServiceError(config_.name + " answered " + std::to_string(r.status) + (r.error.empty() ? "" : ": " + r.error));
  }
  try {
    const json body = json::parse(r.body);
    auto field = [&](const std::string& pointer) {
      const json::json_pointer p(pointer);
      return body.contains(p) && body.at(p).is_string() ? body.at(p).get<std::string>() : std::string();
    };
    return ResolvedAbstract{doi, field(config_.title_pointer), field(config_.abstract_pointer), config_.name};
  } catch (const json::exception& e) {
    throw ServiceError(config_.name + " sent an unreadable body: " + e.what());
  }
}

std::unique_ptr<Resolver> make_resolver(const json& config, const std::filesystem::path& base_dir) {
  const auto kind = config.at("kind").get<std::string>();
  const auto name = config.value("name", kind);
  if (kind == "file") {
    std::filesystem::path path = config.at("path").get<std::string>();
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    return std::make_unique<FileResolver>(name, path);
  }
  if (kind == "http") {
    HttpResolverConfig c;
    c.name = name;
    c.base_url = config.at("base_url").get<std::string>();
    c.path_template = config.value("path_template", c.path_template);
    c.api_key_env = config.value("api_key_env", c.api_key_env);
    c.api_key_header = config.value("api_key_header", c.api_key_header);
    c.title_pointer = config.value("title_pointer", c.title_pointer);
    c.abstract_pointer = config.value("abstract_pointer", c.abstract_pointer);
    c.timeout_seconds = config.value("timeout_seconds", c.timeout_seconds);
    return std::make_unique<HttpResolver>(std::move(c));
  }
  throw std::invalid_argument("unknown resolver kind: " + kind);
}

Resolution resolve_chain(const std::vector<std::unique_ptr<Resolver>>& chain, const std::string& doi) {
  Resolution out;
  for (const auto& r : chain) {
    try {
      if (auto hit = r->resolve(doi)) {
        out.found = std::move(hit);
        return out;
      }
    } catch (const ServiceError& e) {
      out.failures.push_back(r->name() + ": " + e.what());
    }
  }
  out.all_failed = !chain.empty() && out.failures.size() == chain.size();
  return out;
}

}  // namespace topicscope::resolver
