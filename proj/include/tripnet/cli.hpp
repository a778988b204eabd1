// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Run configuration files and the commands behind the tripnet binary.
// Commands write human output to `out`, diagnostics to `err`, and return a
// process exit status.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tripnet/error.hpp"
#include "tripnet/metrics.hpp"
#include "tripnet/network.hpp"
#include "tripnet/pipeline.hpp"
#include "tripnet/records.hpp"
#include "tripnet/synth.hpp"
#include "tripnet/training.hpp"

namespace tripnet {

namespace fs = std::filesystem;

struct DataSource {
  std::optional<fs::path> dataset;  // preprocessed dataset file
  std::optional<fs::path> gps;
  std::optional<fs::path> aux;
  std::optional<fs::path> stations;
  std::optional<fs::path> metro_times;
  std::optional<SynthConfig> synth;  // seed comes from the run seed
};

struct RunConfig {
  std::uint64_t seed = 1;
  fs::path output_dir = "out";
  DataSource data;
  PipelineConfig pipeline;
  NetworkConfig network;
  TrainRunConfig training;
};

namespace detail {

inline void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ContractError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ContractError("unknown key '" + where + "." + k + "'");
  }
}

inline fs::path resolve_path(const Json& v, const fs::path& base) {
  fs::path p = v.get<std::string>();
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

inline Json polygon_json(const std::vector<LatLon>& poly) {
  Json arr = Json::array();
  for (const auto& p : poly) arr.push_back({p.lat, p.lon});
  return arr;
}

inline std::vector<LatLon> polygon_from_json(const Json& j) {
  std::vector<LatLon> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

}  // namespace detail

inline Json to_json(const PipelineConfig& p) {
  return {{"min_points", p.min_points},
          {"coordinate_frame", p.coordinate_frame},
          {"train_fraction", p.train_fraction},
          {"test_fraction", p.test_fraction},
          {"dwell_seconds", p.rules.dwell_seconds},
          {"metro_radius_m", p.rules.metro_radius_m},
          {"bus_radius_m", p.rules.bus_radius_m},
          {"bus_gap_seconds", p.rules.bus_gap_seconds},
          {"cbd_polygon", detail::polygon_json(p.cbd_polygon)},
          {"island_polygon", detail::polygon_json(p.island_polygon)},
          {"numeric_columns", p.schema.numeric_columns},
          {"mode_labels", p.schema.mode_labels},
          {"purpose_labels", p.schema.purpose_labels}};
}

// Everything resolved, including defaults; paths are absolute. Feeding this
// back to run_config_from_json reproduces the same RunConfig.
inline Json to_json(const RunConfig& c) {
  Json data = Json::object();
  auto put = [&](const char* key, const std::optional<fs::path>& p) {
    if (p) data[key] = fs::absolute(*p).lexically_normal().string();
  };
  put("dataset", c.data.dataset);
  put("gps", c.data.gps);
  put("aux", c.data.aux);
  put("stations", c.data.stations);
  put("metro_times", c.data.metro_times);
  if (c.data.synth) {
    data["synth"] = {{"n", c.data.synth->n},
                     {"rho", c.data.synth->rho},
                     {"trips_per_respondent", c.data.synth->trips_per_respondent},
                     {"center", {c.data.synth->center.lat, c.data.synth->center.lon}}};
  }
  Json training = to_json(c.training);
  training.erase("seed");
  training.erase("train_fraction");
  training.erase("test_fraction");
  return {{"seed", c.seed},
          {"output_dir", fs::absolute(c.output_dir).lexically_normal().string()},
          {"data", data},
          {"pipeline", to_json(c.pipeline)},
          {"network", to_json(c.network)},
          {"training", training}};
}

// `base` resolves relative paths (normally the config file's directory).
inline RunConfig run_config_from_json(const Json& j, const fs::path& base = fs::current_path()) {
  detail::reject_unknown(j, {"seed", "output_dir", "data", "pipeline", "network", "training"}, "config");
  RunConfig c;
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = detail::resolve_path(j["output_dir"], base);

    if (j.contains("data")) {
      const Json& d = j["data"];
      detail::reject_unknown(d, {"dataset", "gps", "aux", "stations", "metro_times", "synth"}, "data");
      auto path = [&](const char* key, std::optional<fs::path>& out) {
        if (d.contains(key)) out = detail::resolve_path(d[key], base);
      };
      path("dataset", c.data.dataset);
      path("gps", c.data.gps);
      path("aux", c.data.aux);
      path("stations", c.data.stations);
      path("metro_times", c.data.metro_times);
      if (d.contains("synth")) {
        const Json& s = d["synth"];
        detail::reject_unknown(s, {"n", "rho", "trips_per_respondent", "center"}, "data.synth");
        SynthConfig sc;
        sc.n = s.value("n", sc.n);
        sc.rho = s.value("rho", sc.rho);
        sc.trips_per_respondent = s.value("trips_per_respondent", sc.trips_per_respondent);
        if (s.contains("center")) sc.center = {s["center"].at(0).get<double>(), s["center"].at(1).get<double>()};
        c.data.synth = sc;
      }
    }

    if (j.contains("pipeline")) {
      const Json& p = j["pipeline"];
      detail::reject_unknown(p,
                             {"min_points", "coordinate_frame", "train_fraction", "test_fraction",
                              "dwell_seconds", "metro_radius_m", "bus_radius_m", "bus_gap_seconds",
                              "cbd_polygon", "island_polygon", "numeric_columns", "mode_labels",
                              "purpose_labels"},
                             "pipeline");
      auto& pc = c.pipeline;
      pc.min_points = p.value("min_points", pc.min_points);
      pc.coordinate_frame = p.value("coordinate_frame", pc.coordinate_frame);
      pc.train_fraction = p.value("train_fraction", pc.train_fraction);
      pc.test_fraction = p.value("test_fraction", pc.test_fraction);
      pc.rules.dwell_seconds = p.value("dwell_seconds", pc.rules.dwell_seconds);
      pc.rules.metro_radius_m = p.value("metro_radius_m", pc.rules.metro_radius_m);
      pc.rules.bus_radius_m = p.value("bus_radius_m", pc.rules.bus_radius_m);
      pc.rules.bus_gap_seconds = p.value("bus_gap_seconds", pc.rules.bus_gap_seconds);
      if (p.contains("cbd_polygon")) pc.cbd_polygon = detail::polygon_from_json(p["cbd_polygon"]);
      if (p.contains("island_polygon")) pc.island_polygon = detail::polygon_from_json(p["island_polygon"]);
      if (p.contains("numeric_columns")) {
        pc.schema.numeric_columns = p["numeric_columns"].get<std::vector<std::string>>();
      }
      if (p.contains("mode_labels")) pc.schema.mode_labels = p["mode_labels"].get<std::vector<std::string>>();
      if (p.contains("purpose_labels")) {
        pc.schema.purpose_labels = p["purpose_labels"].get<std::vector<std::string>>();
      }
      if (pc.coordinate_frame != "step_delta" && pc.coordinate_frame != "origin_km" &&
          pc.coordinate_frame != "absolute") {
        throw ContractError("unknown key value 'pipeline.coordinate_frame' = '" + pc.coordinate_frame + "'");
      }
    }

    // Derived network fields follow the pipeline schema unless given.
    NetworkConfig net;
    net.numeric_features = c.pipeline.schema.numeric_columns.size();
    net.mode_classes = c.pipeline.schema.mode_labels.size();
    net.purpose_classes = c.pipeline.schema.purpose_labels.size();
    c.network = network_config_from_json(j.value("network", Json::object()), net);
    c.pipeline.schema.categorical = c.network.embedding;
    c.pipeline.schema.sequence_length = c.network.sequence_length;
    c.pipeline.schema.coordinate_frame = c.pipeline.coordinate_frame;
    if (c.network.numeric_features != c.pipeline.schema.numeric_columns.size()) {
      throw ContractError("network.numeric_features does not match pipeline.numeric_columns");
    }
    if (c.network.mode_classes != c.pipeline.schema.mode_labels.size()) {
      throw ContractError("network.mode_classes does not match pipeline.mode_labels");
    }
    if (c.network.purpose_classes != c.pipeline.schema.purpose_labels.size()) {
      throw ContractError("network.purpose_classes does not match pipeline.purpose_labels");
    }

    Json training = j.value("training", Json::object());
    if (training.is_object()) {
      for (const char* key : {"seed", "train_fraction", "test_fraction"}) {
        if (training.contains(key)) {
          throw ContractError(std::string("unknown key 'training.") + key +
                              "' (set it at the top level or under pipeline)");
        }
      }
    }
    c.training = train_run_config_from_json(training);
  } catch (const Json::exception& e) {
    throw ContractError(std::string("run config: ") + e.what());
  }
  c.training.seed = c.seed;
  c.training.train_fraction = c.pipeline.train_fraction;
  c.training.test_fraction = c.pipeline.test_fraction;
  c.pipeline.split_seed = c.seed;
  c.training.validate();
  return c;
}

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string(), 0, e.byte, e.what());
  }
}

inline RunConfig read_run_config(const fs::path& path) {
  return run_config_from_json(read_json_file(path), fs::absolute(path).parent_path());
}

// Names the first attribute where the dataset and the network disagree.
inline std::optional<std::string> schema_mismatch(const DatasetSchema& ds, const NetworkConfig& net) {
  const auto& a = ds.categorical.attributes();
  const auto& b = net.embedding.attributes();
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    if (i >= a.size()) return "categorical attribute '" + b[i].name + "' missing from the dataset";
    if (i >= b.size()) return "categorical attribute '" + a[i].name + "' missing from the network";
    if (a[i].name != b[i].name) {
      return "categorical attribute " + std::to_string(i) + ": dataset '" + a[i].name +
             "', network '" + b[i].name + "'";
    }
    if (a[i].levels != b[i].levels || a[i].dim != b[i].dim) {
      return "categorical attribute '" + a[i].name + "' differs in levels or embedding size";
    }
  }
  if (ds.numeric_columns.size() != net.numeric_features) {
    return "numeric columns: dataset has " + std::to_string(ds.numeric_columns.size()) +
           ", network expects " + std::to_string(net.numeric_features);
  }
  if (ds.mode_labels.size() != net.mode_classes) return "mode labels differ in count";
  if (ds.purpose_labels.size() != net.purpose_classes) return "purpose labels differ in count";
  if (ds.sequence_length != net.sequence_length) return "sequence length";
  return std::nullopt;
}

inline void require_schema_match(const DatasetSchema& ds, const NetworkConfig& net) {
  if (auto m = schema_mismatch(ds, net)) throw ContractError("schema mismatch: " + *m);
}

// ---------------------------------------------------------------------------
// Commands

inline Dataset preprocess_files(const RunConfig& c, std::ostream& err, Json* counts_out = nullptr) {
  if (!c.data.gps || !c.data.aux) throw UsageError("preprocess needs a GPS file and an aux file");
  const auto streams = read_gps_csv(*c.data.gps);
  const AuxTable aux = read_aux_csv(*c.data.aux);
  std::optional<StationIndex> idx;
  if (c.data.stations) {
    idx = read_station_index(*c.data.stations, c.data.metro_times);
  } else {
    err << "warning: no station index; trips are split by the 3-minute dwell rule only\n";
  }
  Json counts = Json::object();
  const auto trips = detect_trips(streams, idx ? &*idx : nullptr, c.pipeline.rules, &counts);
  Dataset ds = build_records(trips, aux, c.pipeline, counts);
  if (counts_out) *counts_out = ds.provenance;
  return ds;
}

// Dataset named by the config: a file, raw inputs, or synthetic settings.
inline Dataset load_dataset(const RunConfig& c, std::ostream& err) {
  if (c.data.dataset) return read_dataset(*c.data.dataset);
  if (c.data.gps) return preprocess_files(c, err);
  if (c.data.synth) {
    SynthConfig sc = *c.data.synth;
    sc.seed = c.seed;
    return synth_generate(sc, c.pipeline);
  }
  throw ContractError("config names no data source (data.dataset, data.gps/aux or data.synth)");
}

inline int cmd_preprocess(const RunConfig& c, const fs::path& out_path, std::ostream& out,
                          std::ostream& err) {
  Json counts;
  Dataset ds = preprocess_files(c, err, &counts);
  write_dataset(ds, out_path);
  out << counts.dump(2) << '\n';
  return 0;
}

inline int cmd_synth(const SynthConfig& sc, const PipelineConfig& pipe, const fs::path& out_path,
                     const std::optional<fs::path>& raw_dir, std::ostream& out) {
  if (raw_dir) {
    const SynthOutput raw = synth_raw(sc);
    fs::create_directories(*raw_dir);
    write_gps_csv(raw.streams, *raw_dir / "gps.csv");
    write_aux_csv(raw.aux, *raw_dir / "aux.csv");
  }
  Dataset ds = synth_generate(sc, pipe);
  write_dataset(ds, out_path);
  out << ds.provenance.dump(2) << '\n';
  return 0;
}

inline void write_lines(const fs::path& path, const std::vector<Json>& lines) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IngestionError("cannot write " + path.string());
  for (const auto& l : lines) f << l.dump() << '\n';
}

inline int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const Json resolved = to_json(c);
  out << resolved.dump(2) << '\n';
  Dataset ds = load_dataset(c, err);
  require_schema_match(ds.schema, c.network);

  fs::create_directories(c.output_dir);
  {
    std::ofstream f(c.output_dir / "resolved_config.json", std::ios::binary);
    f << resolved.dump(2) << '\n';
  }
  std::ofstream log(c.output_dir / "metrics.jsonl", std::ios::binary);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochSummary& e) {
    for (const auto& r : e.test) log << log_line(r, "test", e.train_loss).dump() << '\n';
    for (const auto& r : e.train) log << log_line(r, "train", e.train_loss).dump() << '\n';
    log.flush();
    return true;
  };
  const TrainResult res = train(c.training, c.network, ds, hooks);

  const Json meta = {{"schema", to_json(ds.schema)}, {"stats", to_json(ds.stats)}};
  if (res.report_snapshot) {
    save_weights(c.output_dir / ("weights_epoch" + std::to_string(c.training.report_epoch) + ".bin"),
                 c.network, *res.report_snapshot, meta);
  }
  if (res.best_snapshot) {
    Json m = meta;
    m["epoch"] = res.best_epoch;
    save_weights(c.output_dir / "weights_best.bin", c.network, *res.best_snapshot, m);
  }
  save_weights(c.output_dir / "weights_final.bin", c.network, res.weights, meta);
  const Json summary = {{"train_examples", res.train_examples},
                        {"test_examples", res.test_examples},
                        {"epochs_run", res.epochs.size()},
                        {"best_epoch", res.best_epoch},
                        {"best_mean_f1", res.best_f1}};
  std::ofstream(c.output_dir / "summary.json", std::ios::binary) << summary.dump(2) << '\n';
  out << summary.dump(2) << '\n';
  return 0;
}

enum class OutputFormat { text, delimited };

inline std::string render_reports(const std::vector<MetricsReport>& reports, OutputFormat fmt) {
  ComparisonTable t;
  t.rows = reports;
  t.epoch = reports.empty() ? 0 : reports.front().epoch;
  return fmt == OutputFormat::text ? render_text(t) : render_delimited(t);
}

inline std::vector<MetricsReport> eval_weights(const fs::path& weights, const Dataset& ds,
                                               const std::string& split) {
  LoadedWeights lw = load_weights(weights);
  require_schema_match(ds.schema, lw.config);
  const auto rows = eligible_records(lw.config, ds.records, split == "all" ? "" : split);
  if (rows.empty()) throw ContractError("no labelled records in split '" + split + "'");
  return evaluate(lw.config, lw.weights, rows, lw.metadata.value("epoch", std::size_t{0}));
}

inline int cmd_eval(const fs::path& weights, const fs::path& dataset, const std::string& split,
                    OutputFormat fmt, const std::optional<fs::path>& out_path, std::ostream& out) {
  const Dataset ds = read_dataset(dataset);
  const auto reports = eval_weights(weights, ds, split);
  const std::string text = render_reports(reports, fmt);
  out << text;
  if (out_path) {
    if (out_path->has_parent_path()) fs::create_directories(out_path->parent_path());
    std::ofstream(*out_path, std::ios::binary) << text;
  }
  return 0;
}

inline int cmd_gradcheck(const NetworkConfig& net, std::uint64_t seed, std::ostream& out) {
  GradCheckOptions opt;
  opt.seed = seed;
  const GradCheckReport rep = grad_check(net, opt);
  std::size_t width = 5;
  for (const auto& e : rep.entries) width = std::max(width, e.block.size());
  out << std::left << std::setw(static_cast<int>(width)) << "block" << "  entries  max_rel_error\n";
  for (const auto& e : rep.entries) {
    out << std::left << std::setw(static_cast<int>(width)) << e.block << "  " << std::right
        << std::setw(7) << e.entries << "  " << std::scientific << std::setprecision(3)
        << e.max_rel_error << std::defaultfloat << (e.pass ? "" : "  FAIL") << '\n';
  }
  out << (rep.passed() ? "PASS" : "FAIL") << " max relative error " << std::scientific
      << std::setprecision(3) << rep.max_rel_error() << std::defaultfloat << " (tolerance "
      << rep.tolerance << ")\n";
  return rep.passed() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Reports over metrics logs

struct RunLog {
  std::string source;
  std::vector<MetricsReport> test;  // every test line, in file order
};

inline RunLog read_metrics_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  RunLog log{path.string(), {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(path.string(), lineno, e.byte, "malformed metrics line");
    }
    if (j.value("split", "") != "test") continue;
    MetricsReport r;
    r.learner = j.at("learner");
    r.task = j.at("task");
    r.model = j.at("model");
    r.epoch = j.at("epoch");
    r.accuracy = j.at("accuracy");
    r.precision = j.at("precision");
    r.recall = j.at("recall");
    r.f1 = j.at("f1");
    log.test.push_back(std::move(r));
  }
  if (log.test.empty()) throw ContractError(path.string() + " holds no test metrics");
  return log;
}

struct ReportOutput {
  ComparisonTable table;
  std::vector<MetricsReport> series;  // per-epoch test F1 for every (run, task)
};

// Table rows come from `epoch` in every log; a log without that epoch is an
// error.
inline ReportOutput build_report(const std::vector<RunLog>& logs, std::size_t epoch) {
  if (logs.empty()) throw ContractError("report needs at least one metrics log");
  std::vector<MetricsReport> single, multi;
  ReportOutput out;
  for (const auto& log : logs) {
    bool found = false;
    for (const auto& r : log.test) {
      out.series.push_back(r);
      if (r.epoch != epoch) continue;
      found = true;
      (r.learner == "multi" ? multi : single).push_back(r);
    }
    if (!found) {
      throw ContractError("epoch misalignment: " + log.source + " has no epoch " + std::to_string(epoch));
    }
  }
  out.table = compare_report(single, multi);
  return out;
}

inline std::string render_series(const std::vector<MetricsReport>& series) {
  std::ostringstream s;
  s << "learner,task,model,epoch,f1\n";
  for (const auto& r : series) {
    s << r.learner << ',' << r.task << ',' << r.model << ',' << r.epoch << ','
      << detail::shortest(r.f1) << '\n';
  }
  return s.str();
}

inline int cmd_report(const std::vector<fs::path>& logs, std::size_t epoch, OutputFormat fmt,
                      const std::optional<fs::path>& out_dir, std::ostream& out) {
  std::vector<RunLog> runs;
  for (const auto& p : logs) runs.push_back(read_metrics_log(fs::is_directory(p) ? p / "metrics.jsonl" : p));
  const ReportOutput rep = build_report(runs, epoch);
  const std::string table = fmt == OutputFormat::text ? render_text(rep.table) : render_delimited(rep.table);
  out << table;
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(*out_dir / (fmt == OutputFormat::text ? "table.txt" : "table.csv"), std::ios::binary)
        << table;
    std::ofstream(*out_dir / "f1_series.csv", std::ios::binary) << render_series(rep.series);
  }
  return 0;
}

}  // namespace tripnet
