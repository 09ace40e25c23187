// Contract suite: the real HTTP server over the fixture project (stub provider,
// file-backed DOI resolvers).

#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "test_util.hpp"
#include "topicscope/http_client.hpp"
#include "topicscope/io.hpp"
#include "topicscope/server.hpp"

using namespace topicscope;
using nlohmann::json;

namespace {

std::filesystem::path fixture_project() { return TOPICSCOPE_FIXTURE_PROJECT; }

// Pipeline config of the fixture project, written next to the server config.
std::filesystem::path write_pipeline_config(const std::filesystem::path& dir) {
  std::ifstream in(test::fixtures_dir() / "pipeline.json");
  json j = json::parse(in);
  j["dir"] = fixture_project().string();
  j["source"]["mock"] = (test::fixtures_dir() / "mock_source.json").string();
  const auto path = dir / "pipeline.json";
  io::write_json_atomic(path, j);
  return path;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto end = s.find("\r\n", pos);
    out.push_back(s.substr(pos, end - pos));
    if (end == std::string::npos) break;
    pos = end + 2;
  }
  return out;
}

struct Running {
  std::unique_ptr<server::Api> api;
  std::unique_ptr<server::HttpServer> http;
  std::thread thread;
  int port = 0;

  Running(const server::ServerConfig& config) : api(std::make_unique<server::Api>(config)) {
    http = std::make_unique<server::HttpServer>(*api);
    port = http->bind("127.0.0.1", 0);
    thread = std::thread([this] { http->listen(); });
  }
  ~Running() {
    // listen() may not have started yet; keep stopping until the thread returns
    std::atomic<bool> done{false};
    std::thread stopper([&] {
      while (!done) {
        http->stop();
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
    });
    thread.join();
    done = true;
    stopper.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

class ServerContract : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("server");
    const auto pipeline = write_pipeline_config(dir_->path());
    json config = {{"projects", {{{"project_id", "synth"}, {"name", "Synthetic"}, {"config", pipeline.string()}},
                                 {{"project_id", "synth2"}, {"name", "Synthetic copy"}, {"config", pipeline.string()}}}},
                   {"resolvers",
                    {{{"kind", "file"}, {"name", "down"}, {"path", "resolver_down.json"}},
                     {{"kind", "file"}, {"name", "records"}, {"path", "resolver_records.json"}}}}};
    server_ = new Running(server::server_config_from_json(config, test::fixtures_dir()));
  }
  static void TearDownTestSuite() {
    delete server_;
    delete dir_;
  }

  static http::Result get(const std::string& path, const http::Params& params = {}) {
    http::Client c(server_->url(), 30);
    return c.get(path, params);
  }
  static json get_json(const std::string& path, const http::Params& params = {}, int status = 200) {
    const auto r = get(path, params);
    EXPECT_EQ(r.status, status) << path << " " << r.body;
    return json::parse(r.body);
  }
  static http::Result post(const std::string& path, const json& body) {
    http::Client c(server_->url(), 30);
    return c.post_json(path, body.dump());
  }
  static const server::LoadedProject& project() { return *server_->api->project("synth"); }

  // the topic whose documents all date from 2015 on
  static int step_topic() {
    const auto& p = project();
    for (std::size_t t = 0; t < p.documents.size(); ++t) {
      bool late = !p.documents[t].empty();
      for (const auto& d : p.documents[t]) late = late && d.pub_date >= "2015-01-01";
      if (late) return static_cast<int>(t);
    }
    return -1;
  }

  static void expect_error(const http::Result& r, int status, const std::string& code) {
    EXPECT_EQ(r.status, status) << r.body;
    const auto j = json::parse(r.body);
    EXPECT_EQ(j.at("code"), code);
    EXPECT_TRUE(j.at("message").is_string());
    EXPECT_TRUE(j.contains("details"));
  }

  static test::TempDir* dir_;
  static Running* server_;
};

test::TempDir* ServerContract::dir_ = nullptr;
Running* ServerContract::server_ = nullptr;

TEST_F(ServerContract, ProjectsListsBothWithModelCounts) {
  const auto j = get_json("/projects");
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0].at("project_id"), "synth");
  EXPECT_EQ(j[1].at("project_id"), "synth2");
  const auto& p = project();
  EXPECT_EQ(j[0].at("n_topics").get<std::size_t>(), p.model.n_topics());
  EXPECT_EQ(j[0].at("n_documents").get<std::size_t>(), p.model.labels.size());
  EXPECT_EQ(j[0].at("serving_entry"), p.serving_entry);
  EXPECT_EQ(j[0].at("granularities"), json::array({1, 3, 6, 12}));
  // cross-check against the fit the pipeline recorded
  const auto fit = io::read_json(fixture_project() / "fit" / "summary.json");
  EXPECT_EQ(j[0].at("n_topics"), fit.at("n_topics"));
}

TEST(ServerEmpty, NoProjectsGivesEmptyList) {
  Running s(server::ServerConfig{});
  http::Client c(s.url(), 10);
  const auto r = c.get("/projects");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body), json::array());
}

TEST_F(ServerContract, EveryResponseNamesServingEntry) {
  const auto entry = project().serving_entry;
  ASSERT_FALSE(entry.empty());
  for (const std::string path : {"/projects/synth/topics", "/projects/synth/map", "/projects/synth/topics/0/documents",
                                 "/projects/synth/topics/999/timeseries"}) {
    const auto r = get(path);
    ASSERT_TRUE(r.headers.count("X-Serving-Entry")) << path;
    EXPECT_EQ(r.headers.at("X-Serving-Entry"), entry);
  }
  EXPECT_EQ(get_json("/projects/synth/topics").at("serving_entry"), entry);
}

TEST_F(ServerContract, TopicsSortedAndLimited) {
  const auto all = get_json("/projects/synth/topics").at("topics");
  ASSERT_EQ(all.size(), project().model.n_topics());
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_GE(all[i - 1].at("size"), all[i].at("size"));
  for (const auto& t : all) {
    EXPECT_FALSE(t.at("top_terms").empty());
    EXPECT_LE(t.at("top_terms").size(), 10u);
    EXPECT_DOUBLE_EQ(t.at("wordcloud")[0].at("weight").get<double>(), 1.0);
  }
  EXPECT_LE(get_json("/projects/synth/topics", {{"limit", "30"}}).at("topics").size(), 30u);
  EXPECT_EQ(get_json("/projects/synth/topics", {{"limit", "2"}}).at("topics").size(), 2u);
  EXPECT_EQ(get_json("/projects/synth/topics", {{"limit", "0"}}).at("topics"), json::array());
  const auto by_id = get_json("/projects/synth/topics", {{"sort", "id"}}).at("topics");
  for (std::size_t i = 0; i < by_id.size(); ++i) EXPECT_EQ(by_id[i].at("topic_id"), static_cast<int>(i));
  expect_error(get("/projects/synth/topics", {{"limit", "-1"}}), 400, "bad_request");
  expect_error(get("/projects/synth/topics", {{"sort", "colour"}}), 400, "bad_request");
  expect_error(get("/projects/nope/topics"), 404, "not_found");
}

TEST_F(ServerContract, SearchTopicVocabularyHitsItsTopic) {
  // one word is too little signal for a 10-wide embedding; use the term list
  for (const auto& t : project().model.topics) {
    std::string term;
    for (std::size_t i = 0; i < 6; ++i) term += (term.empty() ? "" : " ") + t.top_terms.at(i).term;
    const auto j = get_json("/projects/synth/search", {{"q", term}});
    ASSERT_FALSE(j.at("hits").empty());
    EXPECT_EQ(j.at("hits")[0].at("topic_id"), t.topic_id) << term;
    EXPECT_EQ(j.at("query"), term);
    EXPECT_FALSE(j.at("method").get<std::string>().empty());
    double prev = 2.0;
    for (const auto& h : j.at("hits")) {
      const double s = h.at("similarity");
      EXPECT_GE(s, -1.0);
      EXPECT_LE(s, 1.0);
      EXPECT_LE(s, prev);
      prev = s;
    }
  }
}

TEST_F(ServerContract, SearchParameters) {
  EXPECT_EQ(get_json("/projects/synth/search", {{"q", "solar battery"}, {"k", "1"}}).at("hits").size(), 1u);
  expect_error(get("/projects/synth/search", {{"q", ""}}), 400, "bad_request");
  expect_error(get("/projects/synth/search", {{"q", "   "}}), 400, "bad_request");
  expect_error(get("/projects/synth/search"), 400, "bad_request");
  expect_error(get("/projects/synth/search", {{"q", "x"}, {"k", "0"}}), 400, "bad_request");
}

TEST_F(ServerContract, SimilaritiesBoundedForRandomQueries) {
  Rng rng(2);
  const std::string letters = "abcdefghij klmnopqrstuvwxyz";
  for (int i = 0; i < 25; ++i) {
    std::string q = "q";
    for (std::size_t n = 1 + rng.index(30); n > 0; --n) q += letters[rng.index(letters.size())];
    const auto j = get_json("/projects/synth/search", {{"q", q}, {"k", "50"}});
    for (const auto& h : j.at("hits")) {
      EXPECT_GE(h.at("similarity").get<double>(), -1.0);
      EXPECT_LE(h.at("similarity").get<double>(), 1.0);
    }
  }
}

TEST_F(ServerContract, DoiSearch) {
  const auto j = get_json("/projects/synth/search/doi", {{"doi", "10.9999/mock.energy"}});
  EXPECT_EQ(j.at("resolved").at("title"), "Solar photovoltaic inverter and battery storage");
  EXPECT_EQ(j.at("resolved").at("source"), "records");
  ASSERT_FALSE(j.at("hits").empty());
  EXPECT_EQ(j.at("hits")[0].at("topic_id"), step_topic());  // the energy topic
  EXPECT_EQ(get_json("/projects/synth/search/doi", {{"doi", "10.9999/mock.untitled"}}).at("hits")[0].at("topic_id"),
            step_topic());
  expect_error(get("/projects/synth/search/doi", {{"doi", "abc"}}), 400, "bad_request");
  expect_error(get("/projects/synth/search/doi", {{"doi", "10.9999/unknown"}}), 404, "not_found");
  expect_error(get("/projects/synth/search/doi", {{"doi", "10.9999/mock.blank"}}), 422, "unprocessable");
}

TEST(ServerDoi, AllResolversFailingIsBadGateway) {
  test::TempDir dir;
  const auto pipeline = write_pipeline_config(dir.path());
  json config = {{"projects", {{{"project_id", "synth"}, {"name", "S"}, {"config", pipeline.string()}}}},
                 {"resolvers", {{{"kind", "file"}, {"name", "down"}, {"path", "resolver_down.json"}}}}};
  const server::Api api(server::server_config_from_json(config, test::fixtures_dir()));
  const auto r = api.handle("GET", "/projects/synth/search/doi", {{"doi", "10.9999/mock.energy"}}, "");
  EXPECT_EQ(r.status, 502);
  EXPECT_EQ(json::parse(r.body).at("code"), "bad_gateway");
}

namespace {

class FailingProvider : public embed::Provider {
 public:
  explicit FailingProvider(embed::ProviderConfig c) : Provider(std::move(c)) {}
  std::string fingerprint() const override { return "failing"; }
  std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) override {
    throw embed::ProviderError(0, texts.size(), "provider offline");
  }
};

}  // namespace

TEST(ServerProvider, UnavailableProviderIs503) {
  test::TempDir dir;
  const auto pipeline = write_pipeline_config(dir.path());
  json config = {{"projects", {{{"project_id", "synth"}, {"name", "S"}, {"config", pipeline.string()}}}}};
  server::Api api(server::server_config_from_json(config, test::fixtures_dir()));
  auto p = server::load_project(server::ProjectConfig{"synth", "S", pipeline});
  p->provider = std::make_unique<FailingProvider>(p->pipeline.provider);
  api.install(p);
  const auto r = api.handle("GET", "/projects/synth/search", {{"q", "solar"}}, "");
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(json::parse(r.body).at("code"), "unavailable");
}

TEST(ServerProvider, MismatchedProviderRefusesToLoad) {
  test::TempDir dir;
  std::ifstream in(test::fixtures_dir() / "pipeline.json");
  json j = json::parse(in);
  j["dir"] = fixture_project().string();
  j["provider"]["seed"] = 99;
  io::write_json_atomic(dir.path() / "p.json", j);
  EXPECT_THROW(server::load_project(server::ProjectConfig{"x", "x", dir.path() / "p.json"}),
               pipeline::FingerprintMismatch);
}

TEST_F(ServerContract, TimeseriesYearlyHasEighteenBinsAndPartitions) {
  const auto& p = project();
  std::vector<std::size_t> sum(18, 0);
  json totals;
  for (std::size_t t = 0; t < p.model.n_topics(); ++t) {
    const auto j = get_json("/projects/synth/topics/" + std::to_string(t) + "/timeseries", {{"granularity", "12"}});
    ASSERT_EQ(j.at("bins").size(), 18u);
    EXPECT_EQ(j.at("relative"), false);
    for (std::size_t b = 0; b < 18; ++b) sum[b] += j.at("bins")[b].at("count").get<std::size_t>();
    totals = j.at("totals");
  }
  // noise is not routable; add it from the loaded series
  const auto& noise = p.series.at(12).series.at(-1);
  for (std::size_t b = 0; b < 18; ++b) sum[b] += noise.bins[b].count;
  EXPECT_EQ(totals.get<std::vector<std::size_t>>(), sum);
}

TEST_F(ServerContract, TimeseriesRelativeAndErrors) {
  for (const std::string g : {"1", "3", "6", "12"}) {
    const auto j = get_json("/projects/synth/topics/0/timeseries", {{"granularity", g}, {"relative", "true"}});
    EXPECT_EQ(j.at("bins").size(), 18u * 12u / std::stoul(g));
    for (const auto& b : j.at("bins")) {
      EXPECT_GE(b.at("relative").get<double>(), 0.0);
      EXPECT_LE(b.at("relative").get<double>(), 1.0);
    }
  }
  expect_error(get("/projects/synth/topics/0/timeseries", {{"granularity", "2"}}), 400, "bad_request");
  expect_error(get("/projects/synth/topics/0/timeseries", {{"relative", "maybe"}}), 400, "bad_request");
  expect_error(get("/projects/synth/topics/999/timeseries"), 404, "not_found");
  expect_error(get("/projects/synth/topics/-1/timeseries"), 404, "not_found");
  expect_error(get("/projects/synth/topics/abc/timeseries"), 404, "not_found");
}

TEST_F(ServerContract, TestIdenticalIntervalsNotSignificant) {
  // the step topic is zero throughout 2006-2014
  const int t = step_topic();
  ASSERT_GE(t, 0);
  const auto r = post("/projects/synth/topics/" + std::to_string(t) + "/test",
                      {{"intervals", {{{"start_bin", 0}, {"end_bin", 3}}, {{"start_bin", 4}, {"end_bin", 7}}}}});
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j.at("p_value").get<double>(), 1.0);
  EXPECT_EQ(j.at("significant"), false);
  EXPECT_FALSE(j.contains("pairwise"));
}

TEST_F(ServerContract, TestStepFunctionHalvesSignificant) {
  const int t = step_topic();
  ASSERT_GE(t, 0);
  for (const bool rel : {true, false}) {
    const auto r = post("/projects/synth/topics/" + std::to_string(t) + "/test",
                        {{"intervals", {{{"start", "2006-01-01"}, {"end", "2014-12-31"}},
                                        {{"start", "2015-01-01"}, {"end", "2023-12-31"}}}},
                         {"use_relative", rel}});
    ASSERT_EQ(r.status, 200) << r.body;
    const auto j = json::parse(r.body);
    EXPECT_LT(j.at("p_value").get<double>(), 0.05);
    EXPECT_EQ(j.at("significant"), true);
    EXPECT_EQ(j.at("granularity_months"), 12);
  }
}

TEST_F(ServerContract, TestThreeIntervalsHasPairwiseBlock) {
  const auto r = post("/projects/synth/topics/0/test",
                      {{"intervals", {{{"start_bin", 0}, {"end_bin", 5}},
                                      {{"start_bin", 6}, {"end_bin", 11}},
                                      {{"start_bin", 12}, {"end_bin", 17}}}},
                       {"correction", "bonferroni"}});
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  ASSERT_TRUE(j.contains("pairwise"));
  EXPECT_EQ(j.at("pairwise").at("pairs").size(), 3u);
}

TEST_F(ServerContract, TestRejectsBadBodies) {
  const std::string path = "/projects/synth/topics/0/test";
  expect_error(post(path, {{"intervals", {{{"start_bin", 0}, {"end_bin", 5}}, {{"start_bin", 5}, {"end_bin", 9}}}}}),
               400, "bad_request");
  expect_error(post(path, {{"intervals", {{{"start_bin", 0}, {"end_bin", 5}}, {{"start_bin", 10}, {"end_bin", 40}}}}}),
               400, "bad_request");
  expect_error(post(path, {{"intervals", {{{"start_bin", 0}, {"end_bin", 5}}}}}), 400, "bad_request");
  expect_error(post(path, {{"alpha", 0.05}}), 400, "bad_request");
  expect_error(post(path, {{"intervals", {{{"start", "1999-01-01"}, {"end", "2001-01-01"}}}}}), 400, "bad_request");
  http::Client c(server_->url(), 10);
  expect_error(c.post_json(path, "{not json"), 400, "bad_request");
  expect_error(get(path), 405, "method_not_allowed");
}

TEST_F(ServerContract, DocumentsCsv) {
  const auto& p = project();
  for (std::size_t t = 0; t < p.model.n_topics(); ++t) {
    const auto r = get("/projects/synth/topics/" + std::to_string(t) + "/documents", {{"format", "csv"}});
    ASSERT_EQ(r.status, 200);
    auto lines = split_lines(r.body);
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    ASSERT_FALSE(lines.empty());
    EXPECT_EQ(lines[0], "doi,title,pub_date,probability");
    EXPECT_EQ(lines.size() - 1, p.model.topics[t].size);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const double prob = std::stod(lines[i].substr(lines[i].rfind(',') + 1));
      EXPECT_GE(prob, 0.0);
      EXPECT_LE(prob, 1.0);
    }
  }
  const auto j = get_json("/projects/synth/topics/0/documents", {{"format", "json"}});
  EXPECT_EQ(j.at("documents").size(), p.model.topics[0].size);
  expect_error(get("/projects/synth/topics/0/documents", {{"format", "xml"}}), 400, "bad_request");
  expect_error(get("/projects/synth/topics/77/documents"), 404, "not_found");
}

TEST(CsvField, Quoting) {
  EXPECT_EQ(server::csv_field("plain"), "plain");
  EXPECT_EQ(server::csv_field("a, b"), "\"a, b\"");
  EXPECT_EQ(server::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(server::csv_field("two\nlines"), "\"two\nlines\"");
}

TEST_F(ServerContract, MapHasOnePointPerTopic) {
  const auto j = get_json("/projects/synth/map");
  const auto& p = project();
  ASSERT_EQ(j.at("points").size(), p.model.n_topics());
  std::set<std::pair<double, double>> coords;
  for (const auto& pt : j.at("points")) {
    const auto t = pt.at("topic_id").get<std::size_t>();
    EXPECT_EQ(pt.at("size").get<std::size_t>(), p.model.topics[t].size);
    EXPECT_FALSE(pt.at("terms").empty());
    coords.insert({pt.at("x").get<double>(), pt.at("y").get<double>()});
  }
  EXPECT_EQ(coords.size(), p.model.n_topics());
}

TEST(ServerMap, FewerThanTwoTopicsIsConflict) {
  test::TempDir dir;
  const auto pipeline = write_pipeline_config(dir.path());
  json config = {{"projects", {{{"project_id", "synth"}, {"name", "S"}, {"config", pipeline.string()}}}}};
  server::Api api(server::server_config_from_json(config, test::fixtures_dir()));
  auto p = server::load_project(server::ProjectConfig{"synth", "S", pipeline});
  p->model.topics.resize(1);
  p->documents.resize(1);
  p->map.clear();
  api.install(p);
  const auto r = api.handle("GET", "/projects/synth/map", {}, "");
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(json::parse(r.body).at("code"), "conflict");
}

TEST_F(ServerContract, UnknownRoutesAndMethods) {
  expect_error(get("/projects/synth/nothing"), 404, "not_found");
  expect_error(get("/elsewhere"), 404, "not_found");
  expect_error(post("/projects/synth/topics", json::object()), 405, "method_not_allowed");
}

TEST_F(ServerContract, RepeatedReadsAreIdentical) {
  for (const std::string path : {"/projects", "/projects/synth/topics", "/projects/synth/map",
                                 "/projects/synth/topics/1/timeseries", "/projects/synth/topics/2/documents"}) {
    EXPECT_EQ(get(path).body, get(path).body) << path;
  }
}

TEST_F(ServerContract, ConcurrentReadsDuringModelSwap) {
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0}, served{0};
  std::vector<std::thread> readers;
  for (int i = 0; i < 3; ++i) {
    readers.emplace_back([&] {
      http::Client c(server_->url(), 30);
      while (!stop) {
        const auto r = c.get("/projects/synth2/topics");
        if (r.status != 200 || json::parse(r.body).at("topics").empty()) ++bad;
        ++served;
      }
    });
  }
  for (int i = 0; i < 3; ++i) server_->api->reload("synth2");
  while (served < 20) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  stop = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad, 0);
}
