#pragma once

// Thin blocking HTTP client over cpp-httplib. Keeps the httplib include out of
// every other translation unit.

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace topicscope::http {

struct Result {
  int status = 0;  // 0 = no response (connection error, timeout)
  std::string body;
  std::map<std::string, std::string> headers;
  std::string error;
};

using Params = std::vector<std::pair<std::string, std::string>>;

class Client {
 public:
  /// `base_url` is scheme://host[:port][/prefix]; the prefix is prepended to every path.
  Client(const std::string& base_url, double timeout_seconds,
         std::map<std::string, std::string> default_headers = {});
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  Result get(const std::string& path, const Params& params = {});
  Result post_json(const std::string& path, const std::string& body);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string url_encode(const std::string& s);

}  // namespace topicscope::http
