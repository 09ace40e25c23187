#pragma once

// DOI to title/abstract resolution through external metadata services, tried
// in a configured order.

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace topicscope::resolver {

/// 10.<4-9 digit registrant>/<non-empty suffix without whitespace>.
bool valid_doi(const std::string& doi);

struct ResolvedAbstract {
  std::string doi;
  std::string title;
  std::string abstract;
  std::string source;  // resolver name
};

/// The service could not be reached or answered with an error.
class ServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Resolver {
 public:
  virtual ~Resolver() = default;
  virtual std::string name() const = 0;
  /// nullopt when the service does not know the DOI; throws ServiceError otherwise.
  virtual std::optional<ResolvedAbstract> resolve(const std::string& doi) = 0;
};

/// Mock backed by a JSON file: {"records": {doi: {"title": .., "abstract": ..}},
/// "failing": bool}. A failing mock raises ServiceError for every lookup.
class FileResolver : public Resolver {
 public:
  FileResolver(std::string name, const std::filesystem::path& path);
  FileResolver(std::string name, nlohmann::json fixture);
  std::string name() const override { return name_; }
  std::optional<ResolvedAbstract> resolve(const std::string& doi) override;

 private:
  std::string name_;
  nlohmann::json fixture_;
};

struct HttpResolverConfig {
  std::string name;
  std::string base_url;
  std::string path_template = "/{doi}";  // {doi} is replaced by the URL-encoded DOI
  std::string api_key_env;                // environment variable holding the key; empty = none
  std::string api_key_header = "x-api-key";
  std::string title_pointer = "/title";   // JSON pointers into the response body
  std::string abstract_pointer = "/abstract";
  double timeout_seconds = 10.0;
};

/// Generic GET-by-DOI client; 404 means unknown, other non-2xx are service errors.
class HttpResolver : public Resolver {
 public:
  explicit HttpResolver(HttpResolverConfig config);
  std::string name() const override { return config_.name; }
  std::optional<ResolvedAbstract> resolve(const std::string& doi) override;

 private:
  HttpResolverConfig config_;
};

/// {"kind": "file", "name", "path"} or {"kind": "http", "name", "base_url", ...}.
std::unique_ptr<Resolver> make_resolver(const nlohmann::json& config, const std::filesystem::path& base_dir = {});

struct Resolution {
  std::optional<ResolvedAbstract> found;
  std::vector<std::string> failures;  // "name: message" for each failed service
  bool all_failed = false;            // no resolver answered at all
};

/// First successful answer wins. Not-found answers move on to the next resolver.
Resolution resolve_chain(const std::vector<std::unique_ptr<Resolver>>& chain, const std::string& doi);

}  // namespace topicscope::resolver
