#pragma once

// Per-topic time series (binning, relative frequency, rank) and the
// nonparametric tests run over them.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"

namespace topicscope::dynamics {

struct Bin {
  std::size_t bin_id = 0;
  Date start_date;
  std::size_t count = 0;
  double relative = 0.0;
  std::optional<int> rank;  // absent for noise and for empty bins
};

struct TopicTimeSeries {
  int topic_id = 0;
  int granularity_months = 12;
  std::vector<Bin> bins;
};

/// All series of one labelling at one granularity, noise (-1) included.
struct SeriesSet {
  int granularity_months = 12;
  Date window_start;
  Date window_end;
  std::vector<Date> bin_starts;
  std::vector<std::size_t> totals;  // documents per bin over every topic incl. noise
  std::map<int, TopicTimeSeries> series;
};

bool valid_granularity(int months);

/// Index of the bin holding `date`; bins are consecutive spans of `granularity`
/// months anchored at `window_start`.
std::size_t bin_index(Date window_start, int granularity_months, Date date);

/// Counts per (topic, bin). `topics` lists every valid topic id so that topics
/// without documents still get a (zero) series.
SeriesSet bin_documents(std::span<const Date> dates, std::span<const int> labels, int granularity_months,
                        Date window_start, Date window_end, std::span<const int> topics = {});

/// relative = count / bin total (0 for empty bins); rank = competition rank of
/// the count among valid topics in that bin, noise excluded.
void relative_and_rank(SeriesSet& set);

struct TestResult {
  std::string test;
  double statistic = 0.0;
  double p_value = 1.0;
  double alpha = 0.05;
  bool significant = false;
};

enum class Correction { bonferroni, holm };
Correction correction_from_string(const std::string& s);
std::string to_string(Correction c);

struct PairResult {
  std::size_t group_i = 0;
  std::size_t group_j = 0;
  double z = 0.0;
  double raw_p = 1.0;
  double adjusted_p = 1.0;
};

struct PairwiseTestResult {
  Correction correction = Correction::holm;
  std::vector<PairResult> pairs;  // (0,1), (0,2), ..., (k-2,k-1)
};

TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups, double alpha = 0.05);
PairwiseTestResult dunn_test(const std::vector<std::vector<double>>& groups, Correction correction);
/// Exact two-sided McNemar on discordant counts: statistic min(b, c),
/// p = min(1, 2 P(X <= min(b, c))) with X ~ Binomial(b + c, 1/2).
TestResult mcnemar_exact(std::size_t b, std::size_t c, double alpha = 0.05);

struct IntervalSpec {
  std::size_t start_bin = 0;
  std::size_t end_bin = 0;  // inclusive
};

struct Comparison {
  TestResult omnibus;
  std::optional<PairwiseTestResult> pairwise;  // present for three or more intervals
};

/// Kruskal-Wallis over the per-bin values of each interval; with three or more
/// intervals a Dunn post-hoc block is attached (meaningful when the omnibus
/// test is significant).
Comparison compare_intervals(const TopicTimeSeries& series, std::span<const IntervalSpec> intervals,
                             double alpha = 0.05, bool use_relative = true,
                             Correction correction = Correction::holm);

nlohmann::json to_json(const TopicTimeSeries& s, bool relative_only = false);
nlohmann::json to_json(const TestResult& r);
nlohmann::json to_json(const PairwiseTestResult& r);

/// Columns: topic_id,bin_id,start_date,count,relative,rank.
std::string to_csv(const SeriesSet& set);
SeriesSet series_from_csv(const std::string& csv, int granularity_months, Date window_start, Date window_end);

}  // namespace topicscope::dynamics
