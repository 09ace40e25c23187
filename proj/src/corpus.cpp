#include "topicscope/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "topicscope/io.hpp"

namespace topicscope::corpus {

using nlohmann::json;

namespace {

std::string string_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  return it->dump();
}

std::vector<std::string> list_field(const json& j, const char* key) {
  std::vector<std::string> out;
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) return out;
  for (const auto& v : *it) {
    if (v.is_string()) out.push_back(v.get<std::string>());
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "doi",      "source_id",       "title",         "abstract",      "pub_date",
      "language", "author_keywords", "subject_areas", "extra_metadata"};
  return keys;
}

}  // namespace

DocumentRecord record_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("record must be a JSON object");
  DocumentRecord r;
  r.doi = string_field(j, "doi");
  r.source_id = string_field(j, "source_id");
  r.title = string_field(j, "title");
  r.abstract = string_field(j, "abstract");
  r.language = string_field(j, "language");
  r.author_keywords = list_field(j, "author_keywords");
  r.subject_areas = list_field(j, "subject_areas");
  const std::string date = string_field(j, "pub_date");
  if (!date.empty()) {
    try {
      r.pub_date = Date::parse(date);
    } catch (const InvalidArgument&) {
      r.pub_date.reset();
    }
  }
  if (auto it = j.find("extra_metadata"); it != j.end() && it->is_object()) {
    for (const auto& [k, v] : it->items()) {
      r.extra_metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  for (const auto& [k, v] : j.items()) {
    if (known_keys().count(k) || v.is_null()) continue;
    r.extra_metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return r;
}

json record_to_json(const DocumentRecord& r) {
  json j;
  j["doi"] = r.doi;
  j["source_id"] = r.source_id;
  j["title"] = r.title;
  j["abstract"] = r.abstract;
  j["pub_date"] = r.pub_date ? json(r.pub_date->to_string()) : json(nullptr);
  j["language"] = r.language;
  j["author_keywords"] = r.author_keywords;
  j["subject_areas"] = r.subject_areas;
  j["extra_metadata"] = r.extra_metadata;
  return j;
}

std::vector<DocumentRecord> read_ndjson(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<DocumentRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_ndjson(const std::filesystem::path& path, const std::vector<DocumentRecord>& records) {
  std::string buf;
  for (const auto& r : records) {
    buf += record_to_json(r).dump();
    buf += '\n';
  }
  io::write_file_atomic(path, buf);
}

std::string build_query(const SourceQuery& q) {
  if (q.keywords.empty()) throw InvalidArgument("query needs at least one keyword");
  if (q.pubyear_start > q.pubyear_end) {
    throw InvalidArgument("pubyear_start " + std::to_string(q.pubyear_start) +
                          " is after pubyear_end " + std::to_string(q.pubyear_end));
  }
  std::string out = "KEY(";
  for (std::size_t i = 0; i < q.keywords.size(); ++i) {
    const auto& kw = q.keywords[i];
    if (kw.find_first_not_of(' ') == std::string::npos) {
      throw InvalidArgument("empty keyword in query");
    }
    if (kw.find('"') != std::string::npos) {
      throw InvalidArgument("keyword contains a double quote: " + kw);
    }
    if (i > 0) out += " OR ";
    out += '"' + kw + '"';
  }
  out += ")";
  out += " AND PUBYEAR > " + std::to_string(q.pubyear_start - 1);
  out += " AND PUBYEAR < " + std::to_string(q.pubyear_end + 1);
  if (!q.language.empty()) out += " AND LANGUAGE(" + q.language + ")";
  if (!q.pubstage.empty()) out += " AND PUBSTAGE(" + q.pubstage + ")";
  return out;
}

std::string build_query(const std::vector<std::string>& keywords, int year_start, int year_end,
                        const std::string& language, const std::string& pubstage) {
  return build_query(SourceQuery{keywords, year_start, year_end, language, pubstage});
}

json to_json(const CleaningReport& r) {
  return {{"input_count", r.input_count},
          {"dropped_missing_fields", r.dropped_missing_fields},
          {"dropped_duplicates", r.dropped_duplicates},
          {"dropped_out_of_window", r.dropped_out_of_window},
          {"dropped_language", r.dropped_language},
          {"output_count", r.output_count}};
}

CleanResult clean(const std::vector<DocumentRecord>& records, Date window_start, Date window_end,
                  const std::string& language) {
  if (window_end < window_start) throw InvalidArgument("cleaning window end precedes its start");
  CleanResult result;
  auto& rep = result.report;
  rep.input_count = records.size();
  const std::string want_lang = lower(language);
  std::unordered_set<std::string> seen_doi;
  std::unordered_set<std::string> seen_source;

  for (const auto& r : records) {
    if (r.doi.empty() || r.title.empty() || r.abstract.empty() || !r.pub_date) {
      ++rep.dropped_missing_fields;
      continue;
    }
    const bool dup_doi = seen_doi.count(r.doi) > 0;
    const bool dup_source = !r.source_id.empty() && seen_source.count(r.source_id) > 0;
    seen_doi.insert(r.doi);
    if (!r.source_id.empty()) seen_source.insert(r.source_id);
    if (dup_doi || dup_source) {
      ++rep.dropped_duplicates;
      continue;
    }
    if (*r.pub_date < window_start || window_end < *r.pub_date) {
      ++rep.dropped_out_of_window;
      continue;
    }
    if (lower(r.language) != want_lang) {
      ++rep.dropped_language;
      continue;
    }
    result.records.push_back(r);
  }
  rep.output_count = result.records.size();
  return result;
}

json to_json(const CorpusStats& s) {
  json years = json::object();
  for (const auto& [y, c] : s.per_year_counts) years[std::to_string(y)] = c;
  return {{"per_year_counts", years},
          {"undated_count", s.undated_count},
          {"missing_field_percentages", s.missing_field_percentages}};
}

CorpusStats corpus_stats(const std::vector<DocumentRecord>& records) {
  CorpusStats stats;
  std::map<std::string, std::size_t> missing = {
      {"doi", 0},      {"source_id", 0},       {"title", 0},         {"abstract", 0},
      {"pub_date", 0}, {"language", 0}, {"author_keywords", 0}, {"subject_areas", 0}};
  std::set<std::string> extra_keys;
  for (const auto& r : records) {
    for (const auto& [k, v] : r.extra_metadata) extra_keys.insert(k);
  }
  for (const auto& k : extra_keys) missing[k] = 0;

  for (const auto& r : records) {
    if (r.pub_date) {
      ++stats.per_year_counts[r.pub_date->year];
    } else {
      ++stats.undated_count;
    }
    missing["doi"] += r.doi.empty();
    missing["source_id"] += r.source_id.empty();
    missing["title"] += r.title.empty();
    missing["abstract"] += r.abstract.empty();
    missing["pub_date"] += !r.pub_date.has_value();
    missing["language"] += r.language.empty();
    missing["author_keywords"] += r.author_keywords.empty();
    missing["subject_areas"] += r.subject_areas.empty();
    for (const auto& k : extra_keys) {
      auto it = r.extra_metadata.find(k);
      missing[k] += (it == r.extra_metadata.end() || it->second.empty());
    }
  }
  for (const auto& [k, c] : missing) {
    stats.missing_field_percentages[k] =
        records.empty() ? 0.0 : 100.0 * static_cast<double>(c) / static_cast<double>(records.size());
  }
  return stats;
}

}  // namespace topicscope::corpus
