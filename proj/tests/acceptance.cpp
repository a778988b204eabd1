// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Acceptance report: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Set TRIPNET_ACCEPT_ONLY=3,5 to run a subset.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <unistd.h>

#include "testing.hpp"
#include "tripnet/cli.hpp"
#include "tripnet/synth.hpp"
#include "tripnet/training.hpp"

using namespace tripnet;
namespace tu = tripnet::test_util;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kFixtures = TRIPNET_FIXTURES;
const fs::path kConfigs = TRIPNET_CONFIGS;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tripnet_accept_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

double tensor_op_fd_error() {
  tu::Gen g(101);
  double worst = 0.0;
  Matrix a = tu::random_matrix(g, 4, 5, -1, 1), b = tu::random_matrix(g, 5, 3, -1, 1);
  const Matrix p = tu::random_matrix(g, 4, 3, -1, 1);
  auto mm = [&] { return tu::weighted_sum(p, matmul(a, b)); };
  const auto mg = matmul_backward(a, b, p);
  worst = std::max({worst, tu::max_rel_error(mg.da, tu::numeric_gradient(mm, a)),
                    tu::max_rel_error(mg.db, tu::numeric_gradient(mm, b))});

  for (Ewise op : {Ewise::add, Ewise::sub, Ewise::mul}) {
    for (bool broadcast : {false, true}) {
      Matrix x = tu::random_matrix(g, 4, 3, -1, 1);
      Matrix y = tu::random_matrix(g, broadcast ? 1 : 4, 3, -1, 1);
      auto f = [&] { return tu::weighted_sum(p, ewise(op, x, y)); };
      const auto eg = ewise_backward(op, x, y, p);
      worst = std::max({worst, tu::max_rel_error(eg.da, tu::numeric_gradient(f, x)),
                        tu::max_rel_error(eg.db, tu::numeric_gradient(f, y))});
    }
  }

  for (const Activation& act : {Activation::identity(), Activation::sigmoid(), Activation::tanh(),
                                Activation::relu(), Activation::leaky_relu(), Activation::softmax_rows()}) {
    Matrix x = tu::random_matrix(g, 4, 3, -2, 2);
    // Keep rectifier inputs off the kink.
    for (double& v : x.values())
      if (std::abs(v) < 0.05) v = 0.5;
    auto f = [&] { return tu::weighted_sum(p, activate(act, x)); };
    const Matrix y = activate(act, x);
    worst = std::max(worst, tu::max_rel_error(activate_backward(act, x, y, p), tu::numeric_gradient(f, x)));
  }
  return worst;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  Outcome o;
  std::map<std::string, double> by_group;
  auto group_of = [](const std::string& block) {
    if (block.starts_with("embedding")) return std::string("embedding");
    if (block.starts_with("recurrent")) return std::string("recurrent");
    return std::string("dense/heads");
  };
  for (const char* name : {"rnn", "lstm", "gru", "bi-gru", "bi-lstm"}) {
    const RunConfig c = read_run_config(kConfigs / "gradcheck" / (std::string(name) + ".json"));
    if (c.network.recurrent_width > 8 || c.network.sequence_length > 10 || c.network.heads != Heads::both) {
      o.pass = false;
      o.detail += std::string(name) + " toy config exceeds width 8 / T 10; ";
    }
    GradCheckOptions opt;
    opt.seed = c.seed;
    const GradCheckReport rep = grad_check(c.network, opt);
    for (const auto& e : rep.entries) {
      double& w = by_group[std::string(name) + "." + group_of(e.block)];
      w = std::max(w, e.max_rel_error);
      if (!e.pass) {
        o.pass = false;
        o.detail += std::string(name) + " " + e.block + " rel err " + fmt(e.max_rel_error) + "; ";
      }
    }
  }
  const double tensor = tensor_op_fd_error();
  if (!(tensor < 1e-6)) {
    o.pass = false;
    o.detail += "tensor ops rel err " + fmt(tensor) + "; ";
  }
  const double secs = seconds_since(t0);
  if (secs >= 120.0) {
    o.pass = false;
    o.detail += "took " + fmt(secs) + " s; ";
  }
  double worst = 0.0;
  for (const auto& [k, v] : by_group) worst = std::max(worst, v);
  o.detail += "worst network block " + fmt(worst) + " (<1e-4), tensor ops " + fmt(tensor) + " (<1e-6), " +
              fmt(secs) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Scalar oracles

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class W>
void set_all(W& w, double v) {
  for (auto& p : params_of(w)) p.value->fill(v);
}

Outcome criterion_scalars() {
  Outcome o;
  double worst = 0.0;
  auto check = [&](const std::string& what, double got, double want) {
    const double e = std::abs(got - want);
    worst = std::max(worst, e);
    if (!(e < 1e-9)) {
      o.pass = false;
      o.detail += what + " off by " + fmt(e) + "; ";
    }
  };
  const Matrix one(1, 1, 1.0), zero(1, 1, 0.0), half(1, 1, 0.5);
  {
    RnnCellWeights w(1, 1);
    set_all(w, 1.0);
    w.block.b.fill(0.0);
    check("rnn", rnn_step(w, half, half)(0, 0), std::tanh(1.0));
  }
  {
    LstmCellWeights w(1, 1);
    set_all(w, 1.0);
    for (GateBlock* b : {&w.forget, &w.input_gate, &w.output, &w.candidate}) b->b.fill(0.0);
    LstmCellWeights::StepCache cache;
    const CellState s = step_forward(w, one, CellState{zero, zero}, &cache);
    const double gate = sig(1.0), c = gate * std::tanh(1.0);
    check("lstm f", cache.f(0, 0), gate);
    check("lstm i", cache.i(0, 0), gate);
    check("lstm o", cache.o(0, 0), gate);
    check("lstm c", s.c(0, 0), c);
    check("lstm h", s.h(0, 0), gate * std::tanh(c));
  }
  {
    GruCellWeights w(1, 1);
    set_all(w, 1.0);
    for (GateBlock* b : {&w.update, &w.reset, &w.candidate}) b->b.fill(0.0);
    const double z = sig(2.0);
    check("gru h", gru_step(w, one, one)(0, 0), (1.0 - z) + z * std::tanh(1.0 + z));
  }
  {
    // Zero weights: every gate sits at one half.
    LstmCellWeights w(1, 1);
    const auto [h, c] = lstm_step(w, Matrix(1, 1, 0.7), Matrix(1, 1, -0.2), Matrix(1, 1, 0.9));
    check("lstm zero c", c(0, 0), 0.45);
    check("lstm zero h", h(0, 0), 0.5 * std::tanh(0.45));
    GruCellWeights gw(1, 1);
    check("gru zero h", gru_step(gw, Matrix(1, 1, 0.7), Matrix(1, 1, 0.9))(0, 0), 0.45);
  }
  {
    // Saturated gates.
    LstmCellWeights w(1, 1);
    w.forget.b.fill(50.0);
    w.input_gate.b.fill(-50.0);
    w.output.b.fill(50.0);
    const auto [h, c] = lstm_step(w, one, zero, Matrix(1, 1, 0.8));
    check("lstm saturated c", c(0, 0), 0.8);
    check("lstm saturated h", h(0, 0), std::tanh(0.8));
    GruCellWeights gw(1, 1);
    gw.update.b.fill(-50.0);
    check("gru closed update", gru_step(gw, one, Matrix(1, 1, -0.3))(0, 0), -0.3);
    gw.update.b.fill(50.0);
    gw.reset.b.fill(-50.0);
    gw.candidate.W.fill(1.0);
    check("gru open update", gru_step(gw, one, Matrix(1, 1, -0.3))(0, 0), std::tanh(1.0));
  }
  o.detail = "13 closed-form values, worst abs err " + fmt(worst) + " (<1e-9)" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Printed comparison table consistency

Outcome criterion_table_consistency() {
  struct Row {
    const char* name;
    double p, r, f;
  };
  const Row rows[] = {
      {"single mode LSTM", 86.58, 83.75, 85.11},    {"single mode GRU", 87.49, 85.58, 86.50},
      {"single mode Bi-GRU", 86.82, 85.37, 86.07},  {"single purpose LSTM", 82.79, 70.57, 75.98},
      {"single purpose GRU", 83.62, 71.02, 76.59},  {"single purpose Bi-GRU", 81.41, 73.93, 77.38},
      {"multi mode LSTM", 83.50, 76.67, 79.83},     {"multi mode GRU", 85.94, 81.52, 83.59},
      {"multi mode Bi-GRU", 86.24, 82.61, 84.33},   {"multi purpose LSTM", 84.67, 69.79, 76.20},
      {"multi purpose GRU", 85.56, 71.44, 77.61},   {"multi purpose Bi-GRU", 84.41, 73.34, 78.28},
  };
  Outcome o;
  std::size_t ok = 0;
  std::string bad;
  for (const Row& row : rows) {
    const double dev = std::abs(f1(row.p, row.r) - row.f);
    if (dev <= 0.1) {
      ++ok;
    } else {
      o.pass = false;
      bad += std::string(bad.empty() ? "" : ", ") + row.name + " " + fmt(dev);
    }
  }
  o.detail = std::to_string(ok) + "/12 printed rows have F1 within 0.1 of 2PR/(P+R)";
  if (!bad.empty()) o.detail += "; off: " + bad + " (printed values, not fixable in code)";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Time transform

Outcome criterion_time() {
  Outcome o;
  const auto a = transform_time(300), b = transform_time(86100);
  const bool values = std::abs(a.sin_time - 0.0218) < 5e-5 && std::abs(a.cos_time - 0.9998) < 5e-5 &&
                      std::abs(b.sin_time + 0.0218) < 5e-5 && std::abs(b.cos_time - 0.9998) < 5e-5;
  if (!values) {
    o.pass = false;
    o.detail += "boundary values wrong; ";
  }
  tu::Gen g(404);
  std::uniform_real_distribution<double> u(0.0, 86400.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    double s = u(g), t = u(g);
    if (s >= 86400.0) s = 0.0;
    if (t >= 86400.0) t = 0.0;
    const auto p = transform_time(s), q = transform_time(t);
    const double chord = std::hypot(p.sin_time - q.sin_time, p.cos_time - q.cos_time);
    const double d = std::min(std::abs(s - t), 86400.0 - std::abs(s - t));
    worst = std::max(worst, std::abs(chord - 2.0 * std::sin(std::numbers::pi * d / 86400.0)));
  }
  if (!(worst < 1e-12)) {
    o.pass = false;
    o.detail += "isometry err " + fmt(worst) + "; ";
  }
  o.detail += "300 s -> (" + fmt(a.sin_time, 4) + ", " + fmt(a.cos_time, 4) + "), 86100 s -> (" +
              fmt(b.sin_time, 4) + ", " + fmt(b.cos_time, 4) + "), chord err on 1000 pairs " + fmt(worst);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Masking neutrality

Outcome criterion_masking() {
  Outcome o;
  const CellKind kinds[] = {CellKind::rnn, CellKind::lstm, CellKind::gru, CellKind::bi_gru, CellKind::bi_lstm};
  NetworkConfig padded;
  padded.recurrent_layers = 2;
  padded.recurrent_width = 8;
  padded.numeric_widths = {8};
  padded.fused_widths = {8};
  padded.trunk_widths = {8};
  padded.sequence_length = 70;
  tu::Gen g(505);
  std::size_t mismatches = 0;
  for (int trip = 0; trip < 100; ++trip) {
    padded.cell = kinds[trip % 5];
    const auto w = init_network(padded, 500 + trip);
    TripRecord rec = toy_records(padded, 1, 900 + trip).front();
    const std::size_t len = tu::random_size(g, 1, 69);
    rec.trajectory.length = len;
    for (std::size_t t = len; t < 70; ++t) rec.trajectory.steps[t] = StepFeatures{};
    NetworkConfig exact = padded;
    exact.sequence_length = len;
    TripRecord short_rec = rec;
    short_rec.trajectory.steps.resize(len);

    const DropoutSource src{static_cast<std::uint64_t>(trip) + 1, 0};
    const Matrix um = tu::random_matrix(g, 1, padded.mode_classes, -1, 1);
    const Matrix up = tu::random_matrix(g, 1, padded.purpose_classes, -1, 1);
    auto run = [&](const NetworkConfig& cfg, const TripRecord& r) {
      ForwardCache cache;
      const Batch b = make_batch({&r}, cfg.sequence_length);
      const HeadOutputs out = forward(cfg, w, b, true, src, &cache);
      const HeadOutputs infer = forward(cfg, w, b, false);
      return std::tuple{out, infer, backward(cfg, w, cache, HeadGrads{um, up})};
    };
    auto [pt, pi, pg] = run(padded, rec);
    auto [et, ei, eg] = run(exact, short_rec);
    bool same = *pt.mode == *et.mode && *pt.purpose == *et.purpose && *pi.mode == *ei.mode &&
                *pi.purpose == *ei.purpose;
    auto gp = params_of(pg);
    auto ge = params_of(eg);
    for (std::size_t k = 0; k < gp.size(); ++k) same = same && *gp[k].value == *ge[k].value;
    if (!same) {
      ++mismatches;
      o.pass = false;
      if (mismatches <= 3) o.detail += to_string(padded.cell) + " len " + std::to_string(len) + " differs; ";
    }
  }
  o.detail += std::to_string(100 - mismatches) +
              "/100 trips: padded (T=70) and unpadded outputs and all gradients bit-identical";
  return o;
}

// ---------------------------------------------------------------------------
// 6. Synthetic sanity

MetricsReport majority_report(const NetworkConfig& cfg, const Dataset& ds, const std::string& task) {
  const bool mode = task == "mode";
  const std::size_t k = mode ? cfg.mode_classes : cfg.purpose_classes;
  std::vector<std::size_t> counts(k);
  for (const TripRecord* r : eligible_records(cfg, ds.records, "train")) ++counts[*(mode ? r->mode : r->purpose)];
  const std::size_t majority = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  ConfusionMatrix cm(k);
  for (const TripRecord* r : eligible_records(cfg, ds.records, "test")) cm.add(*(mode ? r->mode : r->purpose), majority);
  return make_report(cm, "baseline", task, "majority", 0);
}

Outcome criterion_synthetic() {
  const auto t0 = Clock::now();
  Outcome o;
  SynthConfig sc;
  sc.seed = 42;
  sc.n = 2000;
  sc.rho = 0.8;
  const Dataset ds = synth_generate(sc);
  std::size_t converged = 0, runs = 0;
  std::string lines;
  for (CellKind cell : {CellKind::lstm, CellKind::gru, CellKind::bi_gru}) {
    for (Heads heads : {Heads::mode, Heads::purpose, Heads::both}) {
      NetworkConfig cfg;
      cfg.cell = cell;
      cfg.heads = heads;
      cfg.fused_dropout = 0.2;
      cfg.trunk_dropout = 0.2;
      TrainRunConfig run;
      run.seed = 42;
      run.epochs = 100;
      run.report_epoch = 100;
      run.eval_train = true;
      EpochSummary last;
      bool reached = false;
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochSummary& e) {
        last = e;
        reached = std::all_of(e.train.begin(), e.train.end(), [](const auto& r) { return r.accuracy >= 95.0; });
        return !reached;
      };
      train(run, cfg, ds, hooks);
      ++runs;
      bool ok = reached;
      std::string line = (heads == Heads::both ? "multi" : "single " + to_string(heads)) + " " + display_name(cell) + ": epoch " +
                         std::to_string(last.epoch);
      for (const auto& r : last.train) line += " train." + r.task + " " + fmt(r.accuracy, 4) + "%";
      for (const auto& r : last.test) {
        const double base = majority_report(cfg, ds, r.task).f1;
        line += " test." + r.task + " F1 " + fmt(r.f1, 4) + " vs majority " + fmt(base, 4);
        ok = ok && r.f1 >= base + 15.0;
      }
      converged += ok;
      if (!ok) o.pass = false;
      lines += "\n      " + std::string(ok ? "ok   " : "MISS ") + line + " (" + fmt(seconds_since(t0), 4) + " s)";
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 1800.0) o.pass = false;
  o.detail = std::to_string(converged) + "/" + std::to_string(runs) +
             " runs reach 95% train accuracy within 100 epochs and beat majority F1 by 15 pp, " +
             fmt(secs, 4) + " s total" + lines;
  return o;
}

// ---------------------------------------------------------------------------
// 7. Report reproduction, 10. determinism

Json small_run(const fs::path& out, const std::string& cell, const std::string& heads) {
  return {{"seed", 11},
          {"output_dir", out.string()},
          {"data", {{"synth", {{"n", 120}, {"rho", 0.8}, {"trips_per_respondent", 4}}}}},
          {"network",
           {{"cell", cell},
            {"recurrent_layers", 1},
            {"recurrent_width", 4},
            {"sequence_length", 12},
            {"numeric_widths", {6}},
            {"fused_widths", {6}},
            {"trunk_widths", {6}},
            {"heads", heads}}},
          {"training", {{"epochs", 200}, {"report_epoch", 100}, {"batch_size", 16}}}};
}

std::vector<fs::path> g_report_runs;

Outcome criterion_report() {
  const auto t0 = Clock::now();
  Outcome o;
  const fs::path root = scratch_dir("report");
  std::ostringstream sink;
  for (const char* cell : {"lstm", "gru", "bi-gru"}) {
    for (const char* heads : {"mode", "purpose", "both"}) {
      const fs::path dir = root / (std::string(heads) + "_" + cell);
      cmd_train(run_config_from_json(small_run(dir, cell, heads)), sink, sink);
      g_report_runs.push_back(dir);
      if (!fs::exists(dir / "weights_epoch100.bin")) {
        o.pass = false;
        o.detail += dir.filename().string() + " lacks the epoch-100 snapshot; ";
      }
    }
  }
  std::ostringstream table;
  cmd_report(g_report_runs, 100, OutputFormat::text, root / "report", table);

  std::vector<RunLog> logs;
  for (const auto& d : g_report_runs) logs.push_back(read_metrics_log(d / "metrics.jsonl"));
  const ReportOutput rep = build_report(logs, 100);
  const std::string models[] = {"LSTM", "GRU", "Bi-GRU"};
  std::size_t i = 0;
  bool order = rep.table.rows.size() == 12 && !rep.table.notice && rep.table.epoch == 100;
  for (const char* learner : {"single", "multi"})
    for (const char* task : {"mode", "purpose"})
      for (const auto& m : models) {
        if (i < rep.table.rows.size()) {
          const auto& r = rep.table.rows[i];
          order = order && r.learner == learner && r.task == task && r.model == m && r.epoch == 100;
        }
        ++i;
      }
  if (!order) {
    o.pass = false;
    o.detail += "table rows not in learner/task/model order; ";
  }
  std::map<std::string, std::set<std::size_t>> series;
  for (const auto& r : rep.series) series[r.learner + " " + r.task + " " + r.model].insert(r.epoch);
  bool full = series.size() == 12;
  for (const auto& [k, epochs] : series) full = full && epochs.size() == 200 && *epochs.rbegin() == 200;
  if (!full) {
    o.pass = false;
    o.detail += "F1 series incomplete; ";
  }
  const std::string text = slurp(root / "report" / "table.txt");
  if (text != table.str() || text.find("Multi-task") == std::string::npos) {
    o.pass = false;
    o.detail += "table.txt differs from printed table; ";
  }
  o.detail += "9 runs x 200 epochs -> 12-row table at epoch 100, " + std::to_string(series.size()) +
              " F1 series of 200 epochs, " + fmt(seconds_since(t0), 4) + " s";
  return o;
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path root = scratch_dir("determinism");
  std::ostringstream sink;
  std::vector<std::string> checked;
  auto same = [&](const fs::path& a, const fs::path& b) {
    const bool eq = fs::exists(a) && slurp(a) == slurp(b);
    if (!eq) {
      o.pass = false;
      o.detail += a.filename().string() + " differs; ";
    }
    checked.push_back(a.filename().string());
  };
  // Train twice from the same config.
  for (const char* name : {"a", "b"}) cmd_train(run_config_from_json(small_run(root / name, "gru", "both")), sink, sink);
  for (const char* f : {"metrics.jsonl", "weights_final.bin", "weights_epoch100.bin", "summary.json"})
    same(root / "a" / f, root / "b" / f);
  if (!g_report_runs.empty()) same(root / "a" / "metrics.jsonl", g_report_runs[5] / "metrics.jsonl");

  // Preprocess twice.
  RunConfig pre = run_config_from_json(Json::object());
  pre.data.gps = kFixtures / "tiny" / "gps.csv";
  pre.data.aux = kFixtures / "tiny" / "aux.csv";
  cmd_preprocess(pre, root / "d1.jsonl", sink, sink);
  cmd_preprocess(pre, root / "d2.jsonl", sink, sink);
  same(root / "d1.jsonl", root / "d2.jsonl");

  // Report twice.
  std::ostringstream s1, s2;
  cmd_report({root / "a", root / "b"}, 100, OutputFormat::delimited, root / "r1", s1);
  cmd_report({root / "a", root / "b"}, 100, OutputFormat::delimited, root / "r2", s2);
  same(root / "r1" / "table.csv", root / "r2" / "table.csv");
  same(root / "r1" / "f1_series.csv", root / "r2" / "f1_series.csv");

  o.detail += "byte-identical reruns: train (metrics log, weights, summary), preprocess, report";
  return o;
}

// ---------------------------------------------------------------------------
// 8. Silenced purpose head

Outcome criterion_silenced() {
  Outcome o;
  SynthConfig sc;
  sc.seed = 8;
  sc.n = 40;
  sc.trips_per_respondent = 4;
  const Dataset ds = synth_generate(sc);
  std::size_t steps = 0, compared = 0;
  for (CellKind cell : {CellKind::lstm, CellKind::gru, CellKind::bi_gru}) {
    NetworkConfig single;
    single.cell = cell;
    single.heads = Heads::mode;
    single.recurrent_layers = 2;
    single.recurrent_width = 6;
    single.numeric_widths = {8};
    single.fused_widths = {8};
    single.trunk_widths = {8};
    NetworkConfig multi = single;
    multi.heads = Heads::both;
    TrainRunConfig run;
    run.epochs = 3;
    run.batch_size = 16;
    run.seed = 5;
    std::vector<std::vector<Matrix>> a, b;
    auto recorder = [](std::vector<std::vector<Matrix>>& out) {
      return [&out](std::size_t, std::size_t, const NetworkWeights& w) {
        std::vector<Matrix> snap;
        for (const auto& p : params_of(const_cast<NetworkWeights&>(w)))
          if (!p.name.starts_with("head.")) snap.push_back(*p.value);
        snap.push_back(w.mode_head->W);
        snap.push_back(w.mode_head->b);
        out.push_back(std::move(snap));
      };
    };
    TrainHooks ha, hb;
    ha.on_step = recorder(a);
    hb.on_step = recorder(b);
    train(run, single, ds, ha);
    run.loss.purpose_weight = 0.0;
    train(run, multi, ds, hb);
    bool same = a.size() == b.size() && !a.empty();
    for (std::size_t s = 0; same && s < a.size(); ++s) {
      same = a[s].size() == b[s].size();
      for (std::size_t k = 0; same && k < a[s].size(); ++k) same = a[s][k] == b[s][k];
      compared += a[s].size();
    }
    steps += a.size();
    if (!same) {
      o.pass = false;
      o.detail += display_name(cell) + " trajectories diverge; ";
    }
  }
  o.detail += std::to_string(steps) + " optimizer steps over LSTM/GRU/Bi-GRU, " + std::to_string(compared) +
              " shared-parameter matrices bit-identical to single-task mode runs";
  return o;
}

// ---------------------------------------------------------------------------
// 9. Trip-breaking fixtures

Outcome criterion_trip_breaking() {
  Outcome o;
  const fs::path dir = kFixtures / "trip_breaking";
  const auto streams = read_gps_csv(dir / "gps.csv");
  const auto idx = read_station_index(dir / "stations.csv", dir / "metro_times.csv");
  const Json expected = Json::parse(slurp(dir / "expected.json"));
  std::size_t metro = 0, bus = 0, trips = 0;
  for (const auto& s : streams) {
    const auto res = break_trips(s.points, &idx);
    metro += res.metro_stitches;
    bus += res.bus_stitches;
    trips += res.trips.size();
    const Json& want = expected["trips"].at(s.respondent_id);
    bool ok = res.trips.size() == want.size();
    for (std::size_t k = 0; ok && k < want.size(); ++k) {
      ok = format_iso_datetime(res.trips[k].front().epoch_seconds) == want[k][0].get<std::string>() &&
           format_iso_datetime(res.trips[k].back().epoch_seconds) == want[k][1].get<std::string>() &&
           res.trips[k].size() == want[k][2].get<std::size_t>();
    }
    if (!ok) {
      o.pass = false;
      o.detail += s.respondent_id + " boundaries differ; ";
    }
  }
  if (streams.size() != expected["trips"].size() || metro != expected["metro_stitches"].get<std::size_t>() ||
      bus != expected["bus_stitches"].get<std::size_t>()) {
    o.pass = false;
    o.detail += "stitch counts differ; ";
  }
  o.detail += std::to_string(streams.size()) + " respondents -> " + std::to_string(trips) + " trips, " +
              std::to_string(metro) + " metro and " + std::to_string(bus) + " bus stitches as expected";
  return o;
}

}  // namespace

int main() {
  std::set<int> only;
  if (const char* env = std::getenv("TRIPNET_ACCEPT_ONLY")) {
    std::stringstream s(env);
    std::string item;
    while (std::getline(s, item, ',')) only.insert(std::stoi(item));
  }
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "gradient fidelity", criterion_gradients},
      {2, "scalar cell oracles", criterion_scalars},
      {3, "comparison table consistency", criterion_table_consistency},
      {4, "cyclic time transform", criterion_time},
      {5, "masking neutrality", criterion_masking},
      {6, "synthetic sanity", criterion_synthetic},
      {7, "report reproduction", criterion_report},
      {8, "silenced purpose head", criterion_silenced},
      {9, "trip-breaking fixtures", criterion_trip_breaking},
      {10, "determinism", criterion_determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << o.detail << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() / ("tripnet_accept_" + std::to_string(::getpid())));
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
