#pragma once

// Publication records: source-query construction, cleaning, deduplication,
// corpus statistics, and the newline-delimited JSON corpus format.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"

namespace topicscope::corpus {

struct DocumentRecord {
  std::string doi;
  std::string source_id;
  std::string title;
  std::string abstract;
  std::optional<Date> pub_date;
  std::string language;
  std::vector<std::string> author_keywords;
  std::vector<std::string> subject_areas;
  std::map<std::string, std::string> extra_metadata;

  bool operator==(const DocumentRecord&) const = default;
};

/// Parses one record. Unknown keys go to extra_metadata (non-string values
/// are kept as their JSON text); an unparseable date is treated as absent.
DocumentRecord record_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const DocumentRecord& r);

std::vector<DocumentRecord> read_ndjson(const std::filesystem::path& path);
void write_ndjson(const std::filesystem::path& path, const std::vector<DocumentRecord>& records);

struct SourceQuery {
  std::vector<std::string> keywords;
  int pubyear_start = 0;
  int pubyear_end = 0;
  std::string language;
  std::string pubstage;
};

/// Boolean search string: quoted keywords OR-joined inside a KEY() field
/// restriction, then the publication-year range, language and stage filters,
/// e.g. KEY("a" OR "b") AND PUBYEAR > 2005 AND PUBYEAR < 2024
///      AND LANGUAGE(English) AND PUBSTAGE(final)
std::string build_query(const SourceQuery& query);
std::string build_query(const std::vector<std::string>& keywords, int year_start, int year_end,
                        const std::string& language, const std::string& pubstage);

struct CleaningReport {
  std::size_t input_count = 0;
  std::size_t dropped_missing_fields = 0;
  std::size_t dropped_duplicates = 0;
  std::size_t dropped_out_of_window = 0;
  std::size_t dropped_language = 0;
  std::size_t output_count = 0;

  bool operator==(const CleaningReport&) const = default;
};

nlohmann::json to_json(const CleaningReport& r);

struct CleanResult {
  std::vector<DocumentRecord> records;
  CleaningReport report;
};

/// Drop rules run in a fixed order and each record is counted under the first
/// rule that drops it: missing doi/title/abstract/date, duplicate doi or
/// source id (first occurrence wins), date outside [window_start, window_end],
/// language mismatch (case-insensitive).
CleanResult clean(const std::vector<DocumentRecord>& records, Date window_start, Date window_end,
                  const std::string& language);

struct CorpusStats {
  std::map<int, std::size_t> per_year_counts;
  /// Records without a publication date; per_year_counts + undated = record count.
  std::size_t undated_count = 0;
  std::map<std::string, double> missing_field_percentages;
};

nlohmann::json to_json(const CorpusStats& s);

/// Missing-field percentages cover the fixed record fields plus every
/// extra_metadata key seen anywhere in the input.
CorpusStats corpus_stats(const std::vector<DocumentRecord>& records);

}  // namespace topicscope::corpus
