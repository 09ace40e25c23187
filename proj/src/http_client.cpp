#include "topicscope/http_client.hpp"

#include <stdexcept>

#include "httplib.h"

namespace topicscope::http {

struct Client::Impl {
  std::unique_ptr<httplib::Client> client;
  std::string prefix;
  httplib::Headers headers;
};

Client::Client(const std::string& base_url, double timeout_seconds,
               std::map<std::string, std::string> default_headers)
    : impl_(std::make_unique<Impl>()) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("base URL needs a scheme: " + base_url);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  const std::string origin = base_url.substr(0, path_start);
  if (path_start != std::string::npos) impl_->prefix = base_url.substr(path_start);
  while (!impl_->prefix.empty() && impl_->prefix.back() == '/') impl_->prefix.pop_back();

  impl_->client = std::make_unique<httplib::Client>(origin);
  const auto secs = static_cast<time_t>(timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  impl_->client->set_connection_timeout(secs, usecs);
  impl_->client->set_read_timeout(secs, usecs);
  impl_->client->set_write_timeout(secs, usecs);
  for (auto& [k, v] : default_headers) impl_->headers.emplace(k, v);
}

Client::~Client() = default;

namespace {

Result convert(const httplib::Result& res) {
  Result out;
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  for (const auto& [k, v] : res->headers) out.headers[k] = v;
  return out;
}

}  // namespace

Result Client::get(const std::string& path, const Params& params) {
  std::string target = impl_->prefix + path;
  if (!params.empty()) {
    target += '?';
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (i) target += '&';
      target += url_encode(params[i].first) + '=' + url_encode(params[i].second);
    }
  }
  return convert(impl_->client->Get(target, impl_->headers));
}

Result Client::post_json(const std::string& path, const std::string& body) {
  return convert(impl_->client->Post(impl_->prefix + path, impl_->headers, body, "application/json"));
}

std::string url_encode(const std::string& s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (const unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 15];
    }
  }
  return out;
}

}  // namespace topicscope::http
