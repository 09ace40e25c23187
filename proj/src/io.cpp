#include "topicscope/io.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

namespace topicscope::io {

static_assert(std::endian::native == std::endian::little,
              "binary array files are little-endian; big-endian hosts need byte swapping");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_atomic(const fs::path& path, const json& value, int indent) {
  write_file_atomic(path, value.dump(indent) + "\n");
}

namespace {

template <typename T>
void write_array(const fs::path& path, const Matrix& m) {
  std::string buf(m.values().size() * sizeof(T), '\0');
  char* out = buf.data();
  for (const double v : m.values()) {
    const T t = static_cast<T>(v);
    std::memcpy(out, &t, sizeof(T));
    out += sizeof(T);
  }
  write_file_atomic(path, buf);
}

template <typename T>
Matrix read_array(const fs::path& path, std::size_t cols) {
  const std::string buf = read_file(path);
  if (cols == 0 || buf.size() % (sizeof(T) * cols) != 0) {
    throw std::runtime_error("binary array " + path.string() + " does not match width " +
                             std::to_string(cols));
  }
  const std::size_t count = buf.size() / sizeof(T);
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    T t;
    std::memcpy(&t, buf.data() + i * sizeof(T), sizeof(T));
    values[i] = static_cast<double>(t);
  }
  return Matrix(count / cols, cols, std::move(values));
}

}  // namespace

void write_f32(const fs::path& path, const Matrix& m) { write_array<float>(path, m); }
Matrix read_f32(const fs::path& path, std::size_t cols) { return read_array<float>(path, cols); }
void write_f64(const fs::path& path, const Matrix& m) { write_array<double>(path, m); }
Matrix read_f64(const fs::path& path, std::size_t cols) { return read_array<double>(path, cols); }

void write_i32(const fs::path& path, const std::vector<int>& values) {
  std::string buf(values.size() * sizeof(std::int32_t), '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto v = static_cast<std::int32_t>(values[i]);
    std::memcpy(buf.data() + i * sizeof v, &v, sizeof v);
  }
  write_file_atomic(path, buf);
}

std::vector<int> read_i32(const fs::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() % sizeof(std::int32_t) != 0) {
    throw std::runtime_error("truncated int32 array " + path.string());
  }
  std::vector<int> out(buf.size() / sizeof(std::int32_t));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::int32_t v;
    std::memcpy(&v, buf.data() + i * sizeof v, sizeof v);
    out[i] = v;
  }
  return out;
}

std::string file_fingerprint(const fs::path& path) { return text_fingerprint(read_file(path)); }

std::string text_fingerprint(std::string_view text) { return hex64(fnv1a(text)); }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace topicscope::io
