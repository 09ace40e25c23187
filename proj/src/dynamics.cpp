#include "topicscope/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

namespace topicscope::dynamics {

using nlohmann::json;

bool valid_granularity(int months) { return months == 1 || months == 3 || months == 6 || months == 12; }

std::size_t bin_index(Date window_start, int granularity, Date date) {
  if (date < window_start) throw InvalidArgument("date " + date.to_string() + " precedes the window");
  int months = date.month_index() - window_start.month_index();
  if (date.day < window_start.day) --months;
  int idx = std::max(0, months / granularity);
  while (window_start.add_months((idx + 1) * granularity) <= date) ++idx;
  while (idx > 0 && date < window_start.add_months(idx * granularity)) --idx;
  return static_cast<std::size_t>(idx);
}

SeriesSet bin_documents(std::span<const Date> dates, std::span<const int> labels, int granularity,
                        Date window_start, Date window_end, std::span<const int> topics) {
  if (!valid_granularity(granularity)) {
    throw InvalidArgument("granularity must be 1, 3, 6 or 12 months, got " + std::to_string(granularity));
  }
  if (window_end < window_start) throw InvalidArgument("window end precedes its start");
  if (dates.size() != labels.size()) throw InvalidArgument("dates and labels differ in length");

  SeriesSet set;
  set.granularity_months = granularity;
  set.window_start = window_start;
  set.window_end = window_end;
  const std::size_t n_bins = bin_index(window_start, granularity, window_end) + 1;
  for (std::size_t b = 0; b < n_bins; ++b) {
    set.bin_starts.push_back(window_start.add_months(static_cast<int>(b) * granularity));
  }
  set.totals.assign(n_bins, 0);

  auto series_for = [&](int topic) -> TopicTimeSeries& {
    auto [it, inserted] = set.series.try_emplace(topic);
    if (inserted) {
      it->second.topic_id = topic;
      it->second.granularity_months = granularity;
      it->second.bins.resize(n_bins);
      for (std::size_t b = 0; b < n_bins; ++b) {
        it->second.bins[b].bin_id = b;
        it->second.bins[b].start_date = set.bin_starts[b];
      }
    }
    return it->second;
  };
  series_for(-1);
  for (const int t : topics) series_for(t);

  for (std::size_t i = 0; i < dates.size(); ++i) {
    if (dates[i] < window_start || window_end < dates[i]) {
      throw InvalidArgument("document date " + dates[i].to_string() + " lies outside the window");
    }
    const std::size_t b = bin_index(window_start, granularity, dates[i]);
    ++series_for(labels[i] < 0 ? -1 : labels[i]).bins[b].count;
    ++set.totals[b];
  }
  return set;
}

void relative_and_rank(SeriesSet& set) {
  const std::size_t n_bins = set.totals.size();
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double total = static_cast<double>(set.totals[b]);
    std::vector<std::size_t> counts;
    for (auto& [topic, s] : set.series) {
      auto& bin = s.bins[b];
      bin.relative = total > 0.0 ? static_cast<double>(bin.count) / total : 0.0;
      bin.rank.reset();
      if (topic >= 0) counts.push_back(bin.count);
    }
    if (set.totals[b] == 0) continue;
    for (auto& [topic, s] : set.series) {
      if (topic < 0) continue;
      const std::size_t mine = s.bins[b].count;
      const auto higher = std::count_if(counts.begin(), counts.end(), [&](std::size_t c) { return c > mine; });
      s.bins[b].rank = static_cast<int>(higher) + 1;
    }
  }
}

namespace {

struct Ranked {
  std::vector<std::vector<double>> ranks;  // midranks per group
  double tie_sum = 0.0;                     // sum of t^3 - t over tie groups
  std::size_t n = 0;
};

Ranked midranks(const std::vector<std::vector<double>>& groups) {
  std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pooled;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].size(); ++i) pooled.push_back({groups[g][i], {g, i}});
  }
  std::sort(pooled.begin(), pooled.end());
  Ranked out;
  out.n = pooled.size();
  out.ranks.resize(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) out.ranks[g].resize(groups[g].size());
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    out.tie_sum += t * t * t - t;
    for (std::size_t m = i; m < j; ++m) out.ranks[pooled[m].second.first][pooled[m].second.second] = rank;
    i = j;
  }
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

void check_groups(const std::vector<std::vector<double>>& groups) {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw InvalidArgument("group " + std::to_string(g) + " is empty");
    for (const double v : groups[g]) {
      if (!std::isfinite(v)) throw InvalidArgument("group values must be finite");
    }
  }
}

TestResult finish(std::string name, double statistic, double p, double alpha) {
  p = std::clamp(p, 0.0, 1.0);
  return {std::move(name), statistic, p, alpha, p < alpha};
}

}  // namespace

TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups, double alpha) {
  if (groups.size() < 2) throw InvalidArgument("Kruskal-Wallis needs at least two groups");
  check_groups(groups);
  const Ranked r = midranks(groups);
  if (r.n < 3) throw InvalidArgument("Kruskal-Wallis needs at least three observations");
  const double n = static_cast<double>(r.n);
  const double correction = 1.0 - r.tie_sum / (n * n * n - n);
  if (correction <= 0.0) return finish("kruskal-wallis", 0.0, 1.0, alpha);
  double h = 0.0;
  for (const auto& g : r.ranks) {
    const double d = mean(g) - (n + 1.0) / 2.0;
    h += static_cast<double>(g.size()) * d * d;
  }
  h *= 12.0 / (n * (n + 1.0));
  h /= correction;
  const double df = static_cast<double>(groups.size() - 1);
  const double p = h > 0.0 ? boost::math::gamma_q(df / 2.0, h / 2.0) : 1.0;
  return finish("kruskal-wallis", h, p, alpha);
}

Correction correction_from_string(const std::string& s) {
  if (s == "bonferroni") return Correction::bonferroni;
  if (s == "holm") return Correction::holm;
  throw InvalidArgument("unknown correction: " + s);
}

std::string to_string(Correction c) { return c == Correction::bonferroni ? "bonferroni" : "holm"; }

PairwiseTestResult dunn_test(const std::vector<std::vector<double>>& groups, Correction correction) {
  if (groups.size() < 3) throw InvalidArgument("Dunn's test needs at least three groups");
  check_groups(groups);
  const Ranked r = midranks(groups);
  const double n = static_cast<double>(r.n);
  const double variance = n * (n + 1.0) / 12.0 - (r.n > 1 ? r.tie_sum / (12.0 * (n - 1.0)) : 0.0);
  PairwiseTestResult out;
  out.correction = correction;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      const double se = std::sqrt(std::max(0.0, variance) *
                                  (1.0 / static_cast<double>(groups[i].size()) + 1.0 / static_cast<double>(groups[j].size())));
      const double z = se > 0.0 ? (mean(r.ranks[i]) - mean(r.ranks[j])) / se : 0.0;
      const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
      out.pairs.push_back({i, j, z, std::min(1.0, p), 1.0});
    }
  }
  const std::size_t m = out.pairs.size();
  if (correction == Correction::bonferroni) {
    for (auto& pr : out.pairs) pr.adjusted_p = std::min(1.0, pr.raw_p * static_cast<double>(m));
  } else {
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return out.pairs[a].raw_p < out.pairs[b].raw_p; });
    double running = 0.0;
    for (std::size_t rank = 0; rank < m; ++rank) {
      auto& pr = out.pairs[order[rank]];
      running = std::max(running, std::min(1.0, pr.raw_p * static_cast<double>(m - rank)));
      pr.adjusted_p = running;
    }
  }
  return out;
}

TestResult mcnemar_exact(std::size_t b, std::size_t c, double alpha) {
  if (b + c == 0) throw InvalidArgument("McNemar's test needs at least one discordant pair");
  const std::size_t n = b + c;
  const std::size_t k = std::min(b, c);
  const double log_half_n = -static_cast<double>(n) * std::log(2.0);
  const double lg_n1 = std::lgamma(static_cast<double>(n) + 1.0);
  double tail = 0.0;
  for (std::size_t x = 0; x <= k; ++x) {
    const double log_choose =
        lg_n1 - std::lgamma(static_cast<double>(x) + 1.0) - std::lgamma(static_cast<double>(n - x) + 1.0);
    tail += std::exp(log_choose + log_half_n);
  }
  return finish("mcnemar-exact", static_cast<double>(k), std::min(1.0, 2.0 * tail), alpha);
}

Comparison compare_intervals(const TopicTimeSeries& series, std::span<const IntervalSpec> intervals, double alpha,
                             bool use_relative, Correction correction) {
  if (intervals.size() < 2) throw InvalidArgument("need at least two intervals to compare");
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto& iv = intervals[i];
    if (iv.start_bin > iv.end_bin) throw InvalidArgument("interval " + std::to_string(i) + " has no bins");
    if (iv.end_bin >= series.bins.size()) throw InvalidArgument("interval " + std::to_string(i) + " is out of range");
    for (std::size_t j = 0; j < i; ++j) {
      const auto& other = intervals[j];
      if (iv.start_bin <= other.end_bin && other.start_bin <= iv.end_bin) {
        throw InvalidArgument("intervals " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
      }
    }
  }
  std::vector<std::vector<double>> groups;
  for (const auto& iv : intervals) {
    auto& g = groups.emplace_back();
    for (std::size_t b = iv.start_bin; b <= iv.end_bin; ++b) {
      g.push_back(use_relative ? series.bins[b].relative : static_cast<double>(series.bins[b].count));
    }
  }
  Comparison out;
  out.omnibus = kruskal_wallis(groups, alpha);
  if (groups.size() >= 3) out.pairwise = dunn_test(groups, correction);
  return out;
}

json to_json(const TopicTimeSeries& s, bool relative_only) {
  json bins = json::array();
  for (const auto& b : s.bins) {
    json jb = {{"bin_id", b.bin_id}, {"start_date", b.start_date.to_string()}, {"relative", b.relative}};
    if (!relative_only) jb["count"] = b.count;
    jb["rank"] = b.rank ? json(*b.rank) : json(nullptr);
    bins.push_back(std::move(jb));
  }
  return {{"topic_id", s.topic_id}, {"granularity_months", s.granularity_months}, {"bins", std::move(bins)}};
}

json to_json(const TestResult& r) {
  return {{"test", r.test},
          {"statistic", r.statistic},
          {"p_value", r.p_value},
          {"alpha", r.alpha},
          {"significant", r.significant}};
}

json to_json(const PairwiseTestResult& r) {
  json pairs = json::array();
  for (const auto& p : r.pairs) {
    pairs.push_back({{"interval_i", p.group_i},
                     {"interval_j", p.group_j},
                     {"z", p.z},
                     {"raw_p", p.raw_p},
                     {"adjusted_p", p.adjusted_p}});
  }
  return {{"test", "dunn"}, {"correction", to_string(r.correction)}, {"pairs", std::move(pairs)}};
}

std::string to_csv(const SeriesSet& set) {
  std::ostringstream out;
  out.precision(17);
  out << "topic_id,bin_id,start_date,count,relative,rank\n";
  for (const auto& [topic, s] : set.series) {
    for (const auto& b : s.bins) {
      out << topic << ',' << b.bin_id << ',' << b.start_date.to_string() << ',' << b.count << ',' << b.relative
          << ',';
      if (b.rank) out << *b.rank;
      out << '\n';
    }
  }
  return out.str();
}

SeriesSet series_from_csv(const std::string& csv, int granularity, Date window_start, Date window_end) {
  SeriesSet set;
  set.granularity_months = granularity;
  set.window_start = window_start;
  set.window_end = window_end;
  const std::size_t n_bins = bin_index(window_start, granularity, window_end) + 1;
  for (std::size_t b = 0; b < n_bins; ++b) set.bin_starts.push_back(window_start.add_months(static_cast<int>(b) * granularity));
  set.totals.assign(n_bins, 0);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  if (line != "topic_id,bin_id,start_date,count,relative,rank") throw std::runtime_error("unexpected series CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw std::runtime_error("malformed series CSV row: " + line);
    const int topic = std::stoi(f[0]);
    const std::size_t b = std::stoul(f[1]);
    if (b >= n_bins) throw std::runtime_error("series CSV bin out of range: " + line);
    auto& s = set.series[topic];
    if (s.bins.empty()) {
      s.topic_id = topic;
      s.granularity_months = granularity;
      s.bins.resize(n_bins);
    }
    auto& bin = s.bins[b];
    bin.bin_id = b;
    bin.start_date = Date::parse(f[2]);
    bin.count = std::stoul(f[3]);
    bin.relative = std::stod(f[4]);
    if (!f[5].empty()) bin.rank = std::stoi(f[5]);
    set.totals[b] += bin.count;
  }
  return set;
}

}  // namespace topicscope::dynamics
