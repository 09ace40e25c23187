#pragma once

// Document and query embedding behind a pluggable provider.
//
// Remote wire protocol: POST {endpoint} with {"inputs": [text, ...]}, answered
// by {"embeddings": [[...], ...]} in the same order.

#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"
#include "topicscope/corpus.hpp"

namespace topicscope::embed {

struct EmbeddingMatrix {
  Matrix values;
  std::vector<std::string> row_ids;
  std::string provider_fingerprint;

  std::size_t dim() const { return values.cols(); }
  std::size_t size() const { return values.rows(); }
};

struct ProviderConfig {
  enum class Kind { stub, remote };
  Kind kind = Kind::stub;
  std::string endpoint;  // remote only
  std::size_t batch_size = 32;
  bool normalize = true;
  std::size_t dim = 64;  // stub: output width; remote: expected width (0 = accept any)
  std::uint64_t seed = 0;
  int max_retries = 2;
  double timeout_seconds = 60.0;
  std::size_t max_in_flight = 1;

  void validate() const;
};

ProviderConfig provider_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProviderConfig& c);

/// Raised when a batch cannot be embedded; carries the failed row range [first, last).
class ProviderError : public std::runtime_error {
 public:
  ProviderError(std::size_t first, std::size_t last, const std::string& what)
      : std::runtime_error(what), first_(first), last_(last) {}
  std::size_t first() const { return first_; }
  std::size_t last() const { return last_; }

 private:
  std::size_t first_;
  std::size_t last_;
};

class Provider {
 public:
  explicit Provider(ProviderConfig config) : config_(std::move(config)) {}
  virtual ~Provider() = default;

  /// Raw (unnormalized) vectors for one batch; must be safe to call concurrently.
  virtual std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) = 0;
  /// Identifies the provider and every setting that changes its output.
  virtual std::string fingerprint() const = 0;

  const ProviderConfig& config() const { return config_; }

 private:
  ProviderConfig config_;
};

/// Seeded signed hashing of word-bounded character trigrams into `dim` buckets.
/// Texts sharing vocabulary land close together; pure in (text, seed, dim).
class StubProvider : public Provider {
 public:
  explicit StubProvider(ProviderConfig config);
  std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) override;
  std::string fingerprint() const override;

  std::vector<double> embed_one(const std::string& text) const;
};

class RemoteProvider : public Provider {
 public:
  explicit RemoteProvider(ProviderConfig config);
  std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) override;
  std::string fingerprint() const override;
};

std::unique_ptr<Provider> make_provider(const ProviderConfig& config);

/// Title, a newline, then the abstract; bytes are copied verbatim.
std::string embedding_input(const corpus::DocumentRecord& record);

/// One row per record in input order, built from batches of config.batch_size.
EmbeddingMatrix embed_documents(const std::vector<corpus::DocumentRecord>& records,
                                Provider& provider);
EmbeddingMatrix embed_texts(const std::vector<std::string>& texts,
                            const std::vector<std::string>& row_ids, Provider& provider);
std::vector<double> embed_query(const std::string& text, Provider& provider);

/// `<base>.f32` (little-endian float32, row-major) plus `<base>.json` sidecar.
void save_embeddings(const std::filesystem::path& base, const EmbeddingMatrix& m,
                     const nlohmann::json& extra = nlohmann::json::object());
EmbeddingMatrix load_embeddings(const std::filesystem::path& base);

}  // namespace topicscope::embed
