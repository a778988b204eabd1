// Copyright 2026 The tripnet Authors. Apache 2.0 License.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tripnet/cli.hpp"

namespace {

using tripnet::OutputFormat;
namespace fs = std::filesystem;

tripnet::RunConfig load_config(const std::string& path) {
  if (path.empty()) return tripnet::run_config_from_json(tripnet::Json::object());
  return tripnet::read_run_config(path);
}

// Re-resolves after flag overrides so derived fields (split seed, training
// seed) stay consistent.
tripnet::RunConfig with_overrides(tripnet::RunConfig c, std::optional<std::uint64_t> seed,
                                  std::optional<std::size_t> threads) {
  tripnet::Json j = tripnet::to_json(c);
  if (seed) j["seed"] = *seed;
  if (threads) j["training"]["threads"] = *threads;
  return tripnet::run_config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tripnet: recurrent mode and purpose inference from GPS trips"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  OutputFormat format = OutputFormat::text;
  const std::map<std::string, OutputFormat> formats{{"text", OutputFormat::text},
                                                    {"delimited", OutputFormat::delimited}};

  auto common = [&](CLI::App* sub, bool with_threads) {
    sub->add_option("--config", config, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides the configured seed");
    if (with_threads) sub->add_option("--threads", threads, "worker threads for training");
  };

  auto* pre = app.add_subcommand("preprocess", "raw GPS + aux tables -> dataset");
  common(pre, false);
  std::string gps, aux, stations, metro_times;
  pre->add_option("--gps", gps, "GPS points CSV")->check(CLI::ExistingFile);
  pre->add_option("--aux", aux, "auxiliary survey CSV")->check(CLI::ExistingFile);
  pre->add_option("--stations", stations, "station index CSV")->check(CLI::ExistingFile);
  pre->add_option("--metro-times", metro_times, "metro travel-time CSV")->check(CLI::ExistingFile);
  pre->add_option("--out", out, "dataset file to write")->required();

  auto* syn = app.add_subcommand("synth", "write a seeded synthetic dataset");
  common(syn, false);
  std::optional<std::size_t> n;
  std::optional<double> rho;
  std::string raw_dir;
  syn->add_option("--n", n, "number of trips");
  syn->add_option("--rho", rho, "mode-purpose correlation in [0, 1]");
  syn->add_option("--raw", raw_dir, "also write gps.csv and aux.csv here");
  syn->add_option("--out", out, "dataset file to write")->required();

  auto* tr = app.add_subcommand("train", "train a network from a run configuration");
  common(tr, true);
  tr->add_option("--out", out, "output directory (overrides the config)");

  auto* ev = app.add_subcommand("eval", "evaluate saved weights on a dataset");
  std::string weights, data, split = "test";
  ev->add_option("--weights", weights, "weights file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "train | test | all")
      ->check(CLI::IsMember({"train", "test", "all"}));
  ev->add_option("--format", format, "text | delimited")->transform(CLI::CheckedTransformer(formats));
  ev->add_option("--out", out, "also write the report here");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  gc->add_option("--config", config, "toy run configuration")->required()->check(CLI::ExistingFile);
  gc->add_option("--seed", seed, "overrides the configured seed");

  auto* rep = app.add_subcommand("report", "comparison table and F1 series from metrics logs");
  std::vector<std::string> logs;
  std::size_t epoch = 100;
  rep->add_option("logs", logs, "metrics.jsonl files or run directories")->required();
  rep->add_option("--epoch", epoch, "epoch the table reports");
  rep->add_option("--format", format, "text | delimited")->transform(CLI::CheckedTransformer(formats));
  rep->add_option("--out", out, "directory for the table and f1_series.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      auto c = with_overrides(load_config(config), seed, std::nullopt);
      if (!gps.empty()) c.data.gps = fs::absolute(gps);
      if (!aux.empty()) c.data.aux = fs::absolute(aux);
      if (!stations.empty()) c.data.stations = fs::absolute(stations);
      if (!metro_times.empty()) c.data.metro_times = fs::absolute(metro_times);
      return tripnet::cmd_preprocess(c, out, std::cout, std::cerr);
    }
    if (syn->parsed()) {
      auto c = with_overrides(load_config(config), seed, std::nullopt);
      tripnet::SynthConfig sc = c.data.synth.value_or(tripnet::SynthConfig{});
      sc.seed = c.seed;
      if (n) sc.n = *n;
      if (rho) sc.rho = *rho;
      std::optional<fs::path> raw;
      if (!raw_dir.empty()) raw = raw_dir;
      return tripnet::cmd_synth(sc, c.pipeline, out, raw, std::cout);
    }
    if (tr->parsed()) {
      if (config.empty()) throw tripnet::UsageError("train needs --config");
      auto c = with_overrides(load_config(config), seed, threads);
      if (!out.empty()) c.output_dir = fs::absolute(out);
      return tripnet::cmd_train(c, std::cout, std::cerr);
    }
    if (ev->parsed()) {
      std::optional<fs::path> o;
      if (!out.empty()) o = out;
      return tripnet::cmd_eval(weights, data, split, format, o, std::cout);
    }
    if (gc->parsed()) {
      auto c = with_overrides(load_config(config), seed, std::nullopt);
      return tripnet::cmd_gradcheck(c.network, c.seed, std::cout);
    }
    if (rep->parsed()) {
      std::vector<fs::path> paths(logs.begin(), logs.end());
      std::optional<fs::path> o;
      if (!out.empty()) o = out;
      return tripnet::cmd_report(paths, epoch, format, o, std::cout);
    }
  } catch (const tripnet::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
