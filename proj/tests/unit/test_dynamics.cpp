#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "test_util.hpp"
#include "topicscope/dynamics.hpp"

using namespace topicscope;
using namespace topicscope::dynamics;

namespace {

const Date kStart{2006, 1, 1};
const Date kEnd{2023, 12, 31};

// midranks of the pooled values, group by group
std::vector<std::vector<double>> pooled_ranks(const std::vector<std::vector<double>>& groups) {
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  std::vector<std::vector<double>> out;
  for (const auto& g : groups) {
    auto& r = out.emplace_back();
    for (const double v : g) {
      double less = 0, equal = 0;
      for (const double w : all) {
        less += w < v;
        equal += w == v;
      }
      r.push_back(less + (equal + 1.0) / 2.0);
    }
  }
  return out;
}

}  // namespace

TEST(Binning, YearlyWindowHasEighteenBins) {
  const std::vector<Date> dates{{2006, 6, 1}};
  const std::vector<int> labels{0};
  const auto s = bin_documents(dates, labels, 12, kStart, kEnd);
  ASSERT_EQ(s.bin_starts.size(), 18u);
  for (std::size_t i = 0; i < 18; ++i) EXPECT_EQ(s.bin_starts[i], (Date{2006 + static_cast<int>(i), 1, 1}));
}

TEST(Binning, AnchoredAtWindowStart) {
  EXPECT_EQ(bin_index(kStart, 3, {2006, 3, 31}), 0u);
  EXPECT_EQ(bin_index(kStart, 3, {2006, 4, 1}), 1u);
  EXPECT_EQ(bin_index(kStart, 12, {2023, 12, 31}), 17u);
  EXPECT_EQ(bin_index(kStart, 1, {2006, 2, 28}), 1u);
  // a mid-month anchor
  EXPECT_EQ(bin_index({2006, 1, 15}, 1, {2006, 2, 14}), 0u);
  EXPECT_EQ(bin_index({2006, 1, 15}, 1, {2006, 2, 15}), 1u);
}

TEST(Binning, RejectsBadInput) {
  const std::vector<Date> out_of_window{{2005, 12, 31}};
  const std::vector<int> labels{0};
  EXPECT_THROW(bin_documents(out_of_window, labels, 12, kStart, kEnd), std::exception);
  const std::vector<Date> ok{{2010, 1, 1}};
  EXPECT_THROW(bin_documents(ok, labels, 2, kStart, kEnd), InvalidArgument);
  EXPECT_FALSE(valid_granularity(5));
  EXPECT_TRUE(valid_granularity(6));
}

TEST(Binning, MatchesCountingOracle) {
  Rng rng(12);
  const auto d0 = kStart.days_since_epoch();
  const auto span = kEnd.days_since_epoch() - d0 + 1;
  std::vector<Date> dates;
  std::vector<int> labels;
  for (int i = 0; i < 3000; ++i) {
    dates.push_back(Date::from_days(d0 + static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(span)))));
    labels.push_back(static_cast<int>(rng.index(5)) - 1);
  }
  const std::vector<int> topics{0, 1, 2, 3};
  for (const int g : {1, 3, 6, 12}) {
    auto s = bin_documents(dates, labels, g, kStart, kEnd, topics);
    relative_and_rank(s);
    const std::size_t nbins = static_cast<std::size_t>(18 * 12 / g);
    ASSERT_EQ(s.bin_starts.size(), nbins);
    // oracle: month offset from Jan 2006 divided by g
    std::vector<std::size_t> totals(nbins, 0);
    std::map<std::pair<int, std::size_t>, std::size_t> cells;
    for (std::size_t i = 0; i < dates.size(); ++i) {
      const auto b = static_cast<std::size_t>(((dates[i].year - 2006) * 12 + dates[i].month - 1) / g);
      ++totals[b];
      ++cells[{labels[i], b}];
    }
    EXPECT_EQ(s.totals, totals);
    std::size_t sum = 0;
    for (const auto& [topic, series] : s.series) {
      ASSERT_EQ(series.bins.size(), nbins);
      for (const auto& bin : series.bins) {
        const auto it = cells.find({topic, bin.bin_id});
        EXPECT_EQ(bin.count, it == cells.end() ? 0u : it->second);
        sum += bin.count;
      }
    }
    EXPECT_EQ(sum, dates.size());
    for (std::size_t b = 0; b < nbins; ++b) {
      double rel = 0.0;
      for (const auto& [topic, series] : s.series) rel += series.bins[b].relative;
      if (totals[b] > 0) EXPECT_NEAR(rel, 1.0, 1e-12);
    }
  }
}

TEST(RelativeAndRank, Example) {
  std::vector<Date> dates;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) labels.push_back(0);
  for (int i = 0; i < 3; ++i) labels.push_back(1);
  labels.push_back(-1);
  dates.assign(labels.size(), Date{2006, 2, 1});
  const std::vector<int> topics{0, 1, 2};
  auto s = bin_documents(dates, labels, 12, kStart, kEnd, topics);
  relative_and_rank(s);
  EXPECT_EQ(s.totals[0], 10u);
  EXPECT_DOUBLE_EQ(s.series.at(0).bins[0].relative, 0.6);
  EXPECT_DOUBLE_EQ(s.series.at(1).bins[0].relative, 0.3);
  EXPECT_EQ(s.series.at(0).bins[0].rank, 1);
  EXPECT_EQ(s.series.at(1).bins[0].rank, 2);
  EXPECT_EQ(s.series.at(2).bins[0].rank, 3);
  EXPECT_FALSE(s.series.at(-1).bins[0].rank.has_value());
  // empty bin
  EXPECT_EQ(s.series.at(0).bins[1].relative, 0.0);
  EXPECT_FALSE(s.series.at(0).bins[1].rank.has_value());
}

TEST(RelativeAndRank, CompetitionTies) {
  const std::vector<Date> dates(6, Date{2007, 5, 5});
  const std::vector<int> labels{0, 0, 1, 1, 2, 3};
  const std::vector<int> topics{0, 1, 2, 3};
  auto s = bin_documents(dates, labels, 12, kStart, kEnd, topics);
  relative_and_rank(s);
  EXPECT_EQ(s.series.at(0).bins[1].rank, 1);
  EXPECT_EQ(s.series.at(1).bins[1].rank, 1);
  EXPECT_EQ(s.series.at(2).bins[1].rank, 3);
  EXPECT_EQ(s.series.at(3).bins[1].rank, 3);
}

TEST(KruskalWallis, HandExample) {
  const auto r = kruskal_wallis({{1, 2, 3}, {4, 5, 6}});
  EXPECT_NEAR(r.statistic, 27.0 / 7.0, 1e-9);
  // chi-square(1) upper tail = erfc(sqrt(H / 2))
  EXPECT_NEAR(r.p_value, std::erfc(std::sqrt(27.0 / 14.0)), 1e-12);
  EXPECT_NEAR(r.p_value, 0.0495, 0.001);
  EXPECT_TRUE(r.significant);
}

TEST(KruskalWallis, IdenticalGroups) {
  const auto r = kruskal_wallis({{2, 2, 2}, {2, 2, 2}});
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  const auto r2 = kruskal_wallis({{1, 2, 3}, {1, 2, 3}});
  EXPECT_NEAR(r2.statistic, 0.0, 1e-12);
  EXPECT_NEAR(r2.p_value, 1.0, 1e-12);
}

TEST(KruskalWallis, ThreeGroupsWithTiesMatchesFormula) {
  const std::vector<std::vector<double>> g{{1, 2, 2, 5}, {3, 3, 7}, {2, 8, 9, 9, 10}};
  const auto ranks = pooled_ranks(g);
  double n = 0;
  for (const auto& x : g) n += static_cast<double>(x.size());
  double h = 0;
  for (const auto& r : ranks) {
    double mean = 0;
    for (const double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    h += static_cast<double>(r.size()) * (mean - (n + 1) / 2) * (mean - (n + 1) / 2);
  }
  h *= 12.0 / (n * (n + 1));
  // ties: 2 (x3), 3 (x2), 9 (x2)
  const double tie = (27 - 3) + (8 - 2) + (8 - 2);
  h /= 1.0 - tie / (n * n * n - n);
  const auto r = kruskal_wallis(g);
  EXPECT_NEAR(r.statistic, h, 1e-12);
  EXPECT_NEAR(r.p_value, std::exp(-h / 2.0), 1e-12);  // chi-square(2) tail
}

TEST(KruskalWallis, ScaleAndMonotoneInvariance) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<double>> g(2 + rng.index(3));
    for (auto& x : g) {
      x.resize(2 + rng.index(6));
      for (auto& v : x) v = std::round(rng.uniform(0, 20));
    }
    const auto a = kruskal_wallis(g);
    auto scaled = g;
    auto cubed = g;
    for (auto& x : scaled) {
      for (auto& v : x) v *= 10;
    }
    for (auto& x : cubed) {
      for (auto& v : x) v = std::exp(v / 5.0) + v * v * v;
    }
    EXPECT_NEAR(kruskal_wallis(scaled).statistic, a.statistic, 1e-9);
    EXPECT_NEAR(kruskal_wallis(cubed).p_value, a.p_value, 1e-9);
  }
}

TEST(KruskalWallis, RejectsEmptyGroup) {
  EXPECT_THROW(kruskal_wallis({{1, 2}, {}}), InvalidArgument);
  EXPECT_THROW(kruskal_wallis({{1, 2, 3}}), InvalidArgument);
}

TEST(Dunn, MatchesDirectFormula) {
  const std::vector<std::vector<double>> g{{1, 2, 3, 4}, {10, 11, 12}, {2.5, 3.5, 5, 5}};
  const auto ranks = pooled_ranks(g);
  const double n = 11;
  const double tie = 8 - 2;  // 5 appears twice
  const double var = n * (n + 1) / 12.0 - tie / (12.0 * (n - 1));
  auto mean = [](const std::vector<double>& r) {
    double s = 0;
    for (const double v : r) s += v;
    return s / static_cast<double>(r.size());
  };
  const auto res = dunn_test(g, Correction::bonferroni);
  ASSERT_EQ(res.pairs.size(), 3u);
  const std::vector<std::pair<std::size_t, std::size_t>> order{{0, 1}, {0, 2}, {1, 2}};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto [i, j] = order[k];
    EXPECT_EQ(res.pairs[k].group_i, i);
    EXPECT_EQ(res.pairs[k].group_j, j);
    const double z = (mean(ranks[i]) - mean(ranks[j])) /
                     std::sqrt(var * (1.0 / static_cast<double>(g[i].size()) + 1.0 / static_cast<double>(g[j].size())));
    EXPECT_NEAR(res.pairs[k].z, z, 1e-12);
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    EXPECT_NEAR(res.pairs[k].raw_p, p, 1e-12);
    EXPECT_NEAR(res.pairs[k].adjusted_p, std::min(1.0, 3 * p), 1e-12);
  }
}

TEST(Dunn, HolmStepDown) {
  const std::vector<std::vector<double>> g{{1, 2, 3, 4, 5}, {20, 21, 22, 23, 24}, {3, 4, 5, 6, 7}};
  const auto res = dunn_test(g, Correction::holm);
  std::vector<std::size_t> idx{0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return res.pairs[a].raw_p < res.pairs[b].raw_p; });
  double running = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    running = std::max(running, std::min(1.0, (3.0 - static_cast<double>(r)) * res.pairs[idx[r]].raw_p));
    EXPECT_NEAR(res.pairs[idx[r]].adjusted_p, running, 1e-12);
  }
  // group 1 is the shifted one: its two pairs come first
  EXPECT_EQ(idx[2], 1u);  // (0,2) is
  for (const auto& p : res.pairs) {
    EXPECT_GE(p.adjusted_p, p.raw_p);
    EXPECT_LE(p.adjusted_p, 1.0);
  }
}

TEST(Dunn, IdenticalGroupsAndTooFewGroups) {
  const auto res = dunn_test({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}, Correction::holm);
  for (const auto& p : res.pairs) EXPECT_NEAR(p.adjusted_p, 1.0, 1e-12);
  EXPECT_THROW(dunn_test({{1, 2}, {3, 4}}, Correction::holm), InvalidArgument);
}

TEST(McNemar, TableRowWithinTolerance) {
  const auto r = mcnemar_exact(27, 32);
  EXPECT_EQ(r.statistic, 27.0);
  EXPECT_NEAR(r.p_value, 0.60, 0.01);
  EXPECT_FALSE(r.significant);
}

TEST(McNemar, SmallCasesAgainstBinomialSum) {
  // P(X <= 2) for Binomial(8, 1/2) = (1 + 8 + 28) / 256
  EXPECT_NEAR(mcnemar_exact(2, 6).p_value, 2.0 * 37.0 / 256.0, 1e-15);
  EXPECT_EQ(mcnemar_exact(5, 5).statistic, 5.0);
  EXPECT_EQ(mcnemar_exact(5, 5).p_value, 1.0);
  EXPECT_EQ(mcnemar_exact(3, 11).p_value, mcnemar_exact(11, 3).p_value);
  EXPECT_THROW(mcnemar_exact(0, 0), InvalidArgument);
}

TEST(McNemar, LargeCountsStayInUnitInterval) {
  const auto r = mcnemar_exact(400, 1200);
  EXPECT_GE(r.p_value, 0.0);
  EXPECT_LT(r.p_value, 1e-50);
}

namespace {

TopicTimeSeries series_of(const std::vector<std::size_t>& counts, const std::vector<std::size_t>& totals) {
  TopicTimeSeries s;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    Bin b;
    b.bin_id = i;
    b.start_date = Date{2006 + static_cast<int>(i), 1, 1};
    b.count = counts[i];
    b.relative = totals[i] ? static_cast<double>(counts[i]) / static_cast<double>(totals[i]) : 0.0;
    s.bins.push_back(b);
  }
  return s;
}

}  // namespace

TEST(CompareIntervals, FlatSeriesIdenticalIntervals) {
  const auto s = series_of(std::vector<std::size_t>(18, 4), std::vector<std::size_t>(18, 10));
  const std::vector<IntervalSpec> iv{{0, 4}, {5, 9}};
  const auto c = compare_intervals(s, iv);
  EXPECT_EQ(c.omnibus.p_value, 1.0);
  EXPECT_FALSE(c.pairwise.has_value());
}

TEST(CompareIntervals, StepFunctionHalves) {
  std::vector<std::size_t> counts(18, 0);
  for (std::size_t i = 9; i < 18; ++i) counts[i] = 20 + i;
  const auto s = series_of(counts, std::vector<std::size_t>(18, 100));
  const std::vector<IntervalSpec> iv{{0, 8}, {9, 17}};
  for (const bool rel : {true, false}) {
    const auto c = compare_intervals(s, iv, 0.05, rel);
    EXPECT_LT(c.omnibus.p_value, 0.05);
    EXPECT_TRUE(c.omnibus.significant);
  }
}

TEST(CompareIntervals, ThreeIntervalsMiddleShifted) {
  std::vector<std::size_t> counts{3, 4, 3, 5, 4, 3, 30, 32, 31, 29, 33, 30, 4, 3, 5, 4, 3, 4};
  const auto s = series_of(counts, std::vector<std::size_t>(18, 100));
  const std::vector<IntervalSpec> iv{{0, 5}, {6, 11}, {12, 17}};
  const auto c = compare_intervals(s, iv);
  EXPECT_TRUE(c.omnibus.significant);
  ASSERT_TRUE(c.pairwise.has_value());
  const auto& p = c.pairwise->pairs;
  // (0,1) and (1,2) involve the middle and are significant; (0,2) is not
  EXPECT_LT(p[0].adjusted_p, 0.05);
  EXPECT_LT(p[2].adjusted_p, 0.05);
  EXPECT_GT(p[1].adjusted_p, 0.05);
}

TEST(CompareIntervals, RejectsBadIntervals) {
  const auto s = series_of(std::vector<std::size_t>(18, 4), std::vector<std::size_t>(18, 10));
  const std::vector<IntervalSpec> overlap{{0, 5}, {5, 9}};
  EXPECT_THROW(compare_intervals(s, overlap), InvalidArgument);
  const std::vector<IntervalSpec> reversed{{4, 2}, {6, 9}};
  EXPECT_THROW(compare_intervals(s, reversed), InvalidArgument);
  const std::vector<IntervalSpec> outside{{0, 2}, {10, 18}};
  EXPECT_THROW(compare_intervals(s, outside), InvalidArgument);
  const std::vector<IntervalSpec> single{{0, 2}};
  EXPECT_THROW(compare_intervals(s, single), InvalidArgument);
}

TEST(SeriesCsv, RoundTrip) {
  Rng rng(8);
  std::vector<Date> dates;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    dates.push_back(Date::from_days(kStart.days_since_epoch() + static_cast<std::int64_t>(rng.index(6000))));
    labels.push_back(static_cast<int>(rng.index(4)) - 1);
  }
  const std::vector<int> topics{0, 1, 2};
  auto s = bin_documents(dates, labels, 6, kStart, kEnd, topics);
  relative_and_rank(s);
  const auto csv = to_csv(s);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "topic_id,bin_id,start_date,count,relative,rank");
  const auto back = series_from_csv(csv, 6, kStart, kEnd);
  EXPECT_EQ(back.totals, s.totals);
  EXPECT_EQ(back.bin_starts, s.bin_starts);
  ASSERT_EQ(back.series.size(), s.series.size());
  for (const auto& [t, series] : s.series) {
    const auto& other = back.series.at(t);
    ASSERT_EQ(other.bins.size(), series.bins.size());
    for (std::size_t b = 0; b < series.bins.size(); ++b) {
      EXPECT_EQ(other.bins[b].count, series.bins[b].count);
      EXPECT_EQ(other.bins[b].relative, series.bins[b].relative);
      EXPECT_EQ(other.bins[b].rank, series.bins[b].rank);
    }
  }
  EXPECT_EQ(to_csv(back), csv);
}
