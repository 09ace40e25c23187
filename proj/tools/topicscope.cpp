#include <csignal>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "topicscope/io.hpp"
#include "topicscope/pipeline.hpp"
#include "topicscope/server.hpp"

namespace ts = topicscope;
namespace fs = std::filesystem;

namespace {

constexpr int kExitMissing = 2;
constexpr int kExitMismatch = 3;

struct Options {
  std::string config;
  std::string dir;
  std::string input;
  std::optional<std::size_t> steps;
  std::optional<double> validation_fraction;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> parallel;
  std::string server_config;
  std::optional<std::string> host;
  std::optional<int> port;
  std::string output;
};

ts::pipeline::PipelineConfig load_config(const Options& o) {
  ts::pipeline::PipelineConfig c;
  if (!o.config.empty()) {
    const fs::path path = o.config;
    c = ts::pipeline::pipeline_config_from_json(ts::io::read_json(path), path.parent_path());
  }
  if (!o.dir.empty()) c.dir = o.dir;
  if (o.steps) c.optimizer.steps = *o.steps;
  if (o.validation_fraction) c.optimizer.validation_fraction = *o.validation_fraction;
  if (o.threshold) c.optimizer.registration_threshold = *o.threshold;
  if (o.seed) c.optimizer.seed = *o.seed;
  if (o.parallel) c.optimizer.parallel = *o.parallel;
  c.optimizer.validate();
  return c;
}

int serve(const Options& o) {
  auto sc = ts::server::load_server_config(o.server_config);
  if (o.host) sc.host = *o.host;
  if (o.port) sc.port = *o.port;

  // signals go to the waiter thread only
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ts::server::Api api(sc);
  ts::server::HttpServer http(api, sc.static_dir);
  const int port = http.bind(sc.host, sc.port);
  std::cerr << "listening on " << sc.host << ':' << port << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    http.stop();
  });
  http.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic modeling and topic dynamics over publication abstracts"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--dir", o.dir, "Pipeline directory (overrides the config)");

  auto* fetch = app.add_subcommand("fetch", "Download raw records from the source");
  auto* clean = app.add_subcommand("clean", "Filter, deduplicate and drop incomplete records");
  clean->add_option("--input", o.input, "Raw NDJSON (default: raw.ndjson in the pipeline directory)");
  auto* embed = app.add_subcommand("embed", "Embed the cleaned corpus");
  auto* optimize = app.add_subcommand("optimize", "Random hyperparameter search");
  optimize->add_option("--steps", o.steps, "Number of trials");
  optimize->add_option("--validation-fraction", o.validation_fraction, "Fraction of documents per trial");
  optimize->add_option("--threshold", o.threshold, "Minimum DBCV score for registration");
  optimize->add_option("--seed", o.seed, "Search seed");
  optimize->add_option("--parallel", o.parallel, "Concurrent trials");
  auto* fit = app.add_subcommand("fit", "Fit the best configuration on every document");
  auto* represent = app.add_subcommand("represent", "Topic representations; registers the serving model");
  auto* timeseries = app.add_subcommand("timeseries", "Precompute topic time series");
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--server-config", o.server_config, "Server config JSON")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", o.host, "Bind address");
  serve_cmd->add_option("--port", o.port, "Port (0 = any free port)");
  auto* prune = app.add_subcommand("prune-registry", "Drop all but the best and the serving registry entries");
  auto* report = app.add_subcommand("report", "Corpus statistics and trial summaries as JSON");
  report->add_option("--output", o.output, "Write the report here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (serve_cmd->parsed()) return serve(o);
    const auto c = load_config(o);
    nlohmann::json out;
    if (report->parsed()) {
      out = ts::pipeline::run_report(c);
      if (!o.output.empty()) {
        ts::io::write_json_atomic(o.output, out);
        return 0;
      }
    } else {
      ts::pipeline::PipelineLock lock(c.dir);
      if (fetch->parsed()) out = ts::pipeline::run_fetch(c);
      else if (clean->parsed()) out = ts::pipeline::run_clean(c, o.input);
      else if (embed->parsed()) out = ts::pipeline::run_embed(c);
      else if (optimize->parsed()) out = ts::pipeline::run_optimize(c);
      else if (fit->parsed()) out = ts::pipeline::run_fit(c);
      else if (represent->parsed()) out = ts::pipeline::run_represent(c);
      else if (timeseries->parsed()) out = ts::pipeline::run_timeseries(c);
      else if (prune->parsed()) out = ts::pipeline::run_prune(c);
    }
    std::cout << out.dump(2) << '\n';
    return 0;
  } catch (const ts::io::MissingArtifact& e) {
    std::cerr << e.what() << '\n';
    return kExitMissing;
  } catch (const ts::pipeline::FingerprintMismatch& e) {
    std::cerr << "fingerprint mismatch: " << e.what() << '\n';
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
