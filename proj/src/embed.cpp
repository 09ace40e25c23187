#include "topicscope/embed.hpp"

#include <cctype>
#include <future>
#include <thread>

#include "topicscope/http_client.hpp"
#include "topicscope/io.hpp"

namespace topicscope::embed {

using nlohmann::json;

void ProviderConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (kind == Kind::stub && dim < 1) throw InvalidArgument("stub provider needs dim >= 1");
  if (kind == Kind::remote && endpoint.empty()) throw InvalidArgument("remote provider needs an endpoint");
  if (max_in_flight < 1) throw InvalidArgument("max_in_flight must be >= 1");
}

ProviderConfig provider_config_from_json(const json& j) {
  ProviderConfig c;
  const std::string kind = j.value("kind", "stub");
  if (kind == "stub") {
    c.kind = ProviderConfig::Kind::stub;
  } else if (kind == "remote") {
    c.kind = ProviderConfig::Kind::remote;
  } else {
    throw InvalidArgument("unknown provider kind: " + kind);
  }
  c.endpoint = j.value("endpoint", "");
  c.batch_size = j.value("batch_size", c.batch_size);
  c.normalize = j.value("normalize", c.normalize);
  c.dim = j.value("dim", c.dim);
  c.seed = j.value("seed", c.seed);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.validate();
  return c;
}

json to_json(const ProviderConfig& c) {
  return {{"kind", c.kind == ProviderConfig::Kind::stub ? "stub" : "remote"},
          {"endpoint", c.endpoint},
          {"batch_size", c.batch_size},
          {"normalize", c.normalize},
          {"dim", c.dim},
          {"seed", c.seed},
          {"max_retries", c.max_retries},
          {"timeout_seconds", c.timeout_seconds},
          {"max_in_flight", c.max_in_flight}};
}

StubProvider::StubProvider(ProviderConfig config) : Provider(std::move(config)) {
  this->config().validate();
}

std::vector<double> StubProvider::embed_one(const std::string& text) const {
  const std::size_t dim = config().dim;
  const std::uint64_t seed = config().seed;
  std::vector<double> v(dim, 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const std::string padded = "<" + token + ">";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      const std::uint64_t h = fnv1a(std::string_view(padded).substr(i, 3), seed);
      v[(h >> 1) % dim] += (h & 1) ? 1.0 : -1.0;
    }
    token.clear();
  };
  for (const unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      token += static_cast<char>(std::tolower(c));
    } else {
      flush();
    }
  }
  flush();
  const double n = norm(v);
  if (n == 0.0) {
    v[fnv1a(text, seed) % dim] = 1.0;
  } else {
    for (auto& x : v) x /= n;
  }
  return v;
}

std::vector<std::vector<double>> StubProvider::embed_batch(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

std::string StubProvider::fingerprint() const {
  return "stub:trigram-signed-hash:dim=" + std::to_string(config().dim) +
         ":seed=" + std::to_string(config().seed) +
         ":normalize=" + (config().normalize ? "1" : "0");
}

RemoteProvider::RemoteProvider(ProviderConfig config) : Provider(std::move(config)) {
  this->config().validate();
}

std::vector<std::vector<double>> RemoteProvider::embed_batch(std::span<const std::string> texts) {
  const json body = {{"inputs", std::vector<std::string>(texts.begin(), texts.end())}};
  http::Client client(config().endpoint, config().timeout_seconds);
  std::string last_error;
  for (int attempt = 0; attempt <= config().max_retries; ++attempt) {
    const http::Result r = client.post_json("", body.dump());
    if (r.status == 200) {
      json parsed;
      try {
        parsed = json::parse(r.body);
        auto rows = parsed.at("embeddings").get<std::vector<std::vector<double>>>();
        if (rows.size() != texts.size()) {
          throw std::runtime_error("expected " + std::to_string(texts.size()) + " embeddings, got " +
                                   std::to_string(rows.size()));
        }
        return rows;
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("malformed embedding response: ") + e.what());
      }
    }
    last_error = r.status == 0 ? r.error : "HTTP " + std::to_string(r.status) + ": " + r.body;
    if (r.status != 0 && r.status != 429 && r.status < 500) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50 << attempt));
  }
  throw std::runtime_error("embedding provider failed: " + last_error);
}

std::string RemoteProvider::fingerprint() const {
  return "remote:" + config().endpoint + ":normalize=" + (config().normalize ? "1" : "0");
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& config) {
  if (config.kind == ProviderConfig::Kind::stub) return std::make_unique<StubProvider>(config);
  return std::make_unique<RemoteProvider>(config);
}

std::string embedding_input(const corpus::DocumentRecord& record) {
  if (record.title.empty()) throw InvalidArgument("embedding input needs a title (doi " + record.doi + ")");
  if (record.abstract.empty()) {
    throw InvalidArgument("embedding input needs an abstract (doi " + record.doi + ")");
  }
  std::string out;
  out.reserve(record.title.size() + 1 + record.abstract.size());
  out += record.title;
  out += '\n';
  out += record.abstract;
  return out;
}

namespace {

void finish_row(std::vector<double>& row, bool normalize, std::size_t index) {
  for (const double x : row) {
    if (!std::isfinite(x)) {
      throw ProviderError(index, index + 1, "non-finite embedding value in row " + std::to_string(index));
    }
  }
  if (!normalize) return;
  const double n = norm(row);
  if (n > 0.0) {
    for (auto& x : row) x /= n;
  }
}

}  // namespace

EmbeddingMatrix embed_texts(const std::vector<std::string>& texts,
                            const std::vector<std::string>& row_ids, Provider& provider) {
  if (texts.empty()) throw InvalidArgument("nothing to embed");
  if (texts.size() != row_ids.size()) throw InvalidArgument("texts and row ids differ in length");
  const auto& cfg = provider.config();
  const std::size_t n = texts.size();
  const std::size_t batch = cfg.batch_size;

  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t first = 0; first < n; first += batch) ranges.emplace_back(first, std::min(n, first + batch));

  std::vector<std::vector<double>> rows(n);
  auto run = [&](std::pair<std::size_t, std::size_t> range) {
    const auto [first, last] = range;
    std::vector<std::vector<double>> out;
    try {
      out = provider.embed_batch(std::span<const std::string>(texts).subspan(first, last - first));
    } catch (const ProviderError&) {
      throw;
    } catch (const std::exception& e) {
      throw ProviderError(first, last,
                          "batch [" + std::to_string(first) + ", " + std::to_string(last) + ") failed: " + e.what());
    }
    for (std::size_t i = first; i < last; ++i) rows[i] = std::move(out[i - first]);
  };

  for (std::size_t next = 0; next < ranges.size();) {
    const std::size_t wave = std::min(cfg.max_in_flight, ranges.size() - next);
    if (wave == 1) {
      run(ranges[next]);
    } else {
      std::vector<std::future<void>> futures;
      for (std::size_t w = 0; w < wave; ++w) futures.push_back(std::async(std::launch::async, run, ranges[next + w]));
      for (auto& f : futures) f.get();
    }
    next += wave;
  }

  const std::size_t dim = rows.front().size();
  if (dim == 0) throw ProviderError(0, 1, "provider returned an empty vector");
  if (cfg.kind == ProviderConfig::Kind::remote && cfg.dim != 0 && cfg.dim != dim) {
    throw ProviderError(0, n, "provider returned dimension " + std::to_string(dim) + ", expected " +
                                  std::to_string(cfg.dim));
  }
  EmbeddingMatrix m{Matrix(n, dim), row_ids, provider.fingerprint()};
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != dim) {
      throw ProviderError(i, i + 1, "row " + std::to_string(i) + " has dimension " + std::to_string(rows[i].size()));
    }
    finish_row(rows[i], cfg.normalize, i);
    std::copy(rows[i].begin(), rows[i].end(), m.values.row(i).begin());
  }
  return m;
}

EmbeddingMatrix embed_documents(const std::vector<corpus::DocumentRecord>& records, Provider& provider) {
  std::vector<std::string> texts;
  std::vector<std::string> ids;
  texts.reserve(records.size());
  ids.reserve(records.size());
  for (const auto& r : records) {
    texts.push_back(embedding_input(r));
    ids.push_back(r.doi);
  }
  return embed_texts(texts, ids, provider);
}

std::vector<double> embed_query(const std::string& text, Provider& provider) {
  if (text.empty()) throw InvalidArgument("query text is empty");
  const std::string t[] = {text};
  auto rows = provider.embed_batch(t);
  if (rows.size() != 1 || rows[0].empty()) throw std::runtime_error("provider returned no query vector");
  finish_row(rows[0], provider.config().normalize, 0);
  return rows[0];
}

void save_embeddings(const std::filesystem::path& base, const EmbeddingMatrix& m, const json& extra) {
  std::filesystem::path bin = base;
  bin += ".f32";
  std::filesystem::path side = base;
  side += ".json";
  io::write_f32(bin, m.values);
  json j = extra;
  j["dim"] = m.dim();
  j["rows"] = m.size();
  j["row_ids"] = m.row_ids;
  j["provider_fingerprint"] = m.provider_fingerprint;
  j["data_fingerprint"] = io::file_fingerprint(bin);
  io::write_json_atomic(side, j);
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& base) {
  std::filesystem::path bin = base;
  bin += ".f32";
  std::filesystem::path side = base;
  side += ".json";
  const json j = io::read_json(side);
  EmbeddingMatrix m;
  m.values = io::read_f32(bin, j.at("dim").get<std::size_t>());
  m.row_ids = j.at("row_ids").get<std::vector<std::string>>();
  m.provider_fingerprint = j.value("provider_fingerprint", "");
  if (m.row_ids.size() != m.values.rows()) {
    throw std::runtime_error("embedding sidecar row count does not match " + bin.string());
  }
  return m;
}

}  // namespace topicscope::embed
