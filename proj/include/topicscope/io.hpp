#pragma once

// File plumbing shared by every stage: atomic writes, little-endian binary
// arrays, content fingerprints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"

namespace topicscope::io {

using nlohmann::json;
namespace fs = std::filesystem;

/// Raised when a required input file is missing or unreadable.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const fs::path& path)
      : std::runtime_error("missing artifact: " + path.string()), path_(path) {}
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view contents);

json read_json(const fs::path& path);
void write_json_atomic(const fs::path& path, const json& value, int indent = 2);

/// Row-major little-endian float32 file (embedding persistence).
void write_f32(const fs::path& path, const Matrix& m);
Matrix read_f32(const fs::path& path, std::size_t cols);
/// Row-major little-endian float64 file (fitted state).
void write_f64(const fs::path& path, const Matrix& m);
Matrix read_f64(const fs::path& path, std::size_t cols);

void write_i32(const fs::path& path, const std::vector<int>& values);
std::vector<int> read_i32(const fs::path& path);

/// Hex FNV-1a fingerprint of a file's bytes.
std::string file_fingerprint(const fs::path& path);
std::string text_fingerprint(std::string_view text);

/// UTC timestamp, ISO-8601 with seconds.
std::string utc_timestamp();

}  // namespace topicscope::io
