// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Cross-entropy losses, Adam, the epoch loop and a finite-difference
// gradient checker.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tripnet/error.hpp"
#include "tripnet/metrics.hpp"
#include "tripnet/network.hpp"
#include "tripnet/records.hpp"
#include "tripnet/rng.hpp"

namespace tripnet {

// ---------------------------------------------------------------------------
// Losses

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> dlogits;  // probs - one_hot(label)
};

inline CrossEntropy cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) {
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(probs.size()) + " classes");
  }
  CrossEntropy ce;
  ce.loss = -std::log(probs[label]);
  ce.dlogits.assign(probs.begin(), probs.end());
  ce.dlogits[label] -= 1.0;
  return ce;
}

// Sum of row losses and the logit gradient scaled by `scale`.
struct BatchLoss {
  double sum = 0.0;
  Matrix dlogits;
};

inline BatchLoss cross_entropy_rows(const Matrix& probs, const std::vector<std::size_t>& labels,
                                    double scale) {
  if (labels.size() != probs.rows()) throw DimensionError("label count does not match batch rows");
  BatchLoss out{0.0, Matrix(probs.rows(), probs.cols())};
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto ce = cross_entropy(probs.row(r), labels[r]);
    out.sum += ce.loss;
    auto d = out.dlogits.row(r);
    for (std::size_t c = 0; c < d.size(); ++c) d[c] = scale * ce.dlogits[c];
  }
  return out;
}

struct LossSpec {
  double mode_weight = 1.0;
  double purpose_weight = 1.0;

  void validate() const {
    if (mode_weight < 0.0 || purpose_weight < 0.0) throw ContractError("loss weights must be >= 0");
    if (mode_weight == 0.0 && purpose_weight == 0.0) {
      throw ContractError("at least one loss weight must be positive");
    }
  }
};

inline double multitask_loss(const LossSpec& spec, std::optional<double> mode_loss,
                             std::optional<double> purpose_loss) {
  double total = 0.0;
  if (mode_loss) total += spec.mode_weight * *mode_loss;
  if (purpose_loss) total += spec.purpose_weight * *purpose_loss;
  return total;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

inline void adam_step(AdamState& s, const ParamList& params, const ParamList& grads) {
  if (params.size() != grads.size()) throw DimensionError("parameter and gradient lists differ");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    params[k].value->require_same(*grads[k].value, "adam_step");
    if (!all_finite(*grads[k].value)) {
      throw NumericError("non-finite gradient in " + grads[k].name + " at step " +
                         std::to_string(s.step + 1));
    }
  }
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.value->rows(), p.value->cols());
      s.v.emplace_back(p.value->rows(), p.value->cols());
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].value->values();
    const auto g = grads[k].value->values();
    auto m = s.m[k].values();
    auto v = s.v[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      p[i] -= s.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Run configuration

struct TrainRunConfig {
  std::size_t epochs = 200;
  std::size_t report_epoch = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  std::size_t threads = 1;
  bool eval_train = false;
  LossSpec loss;
  AdamState adam;  // hyperparameters only; moments start empty

  void validate() const {
    if (batch_size < 1) throw ContractError("batch size must be >= 1");
    if (epochs < 1) throw ContractError("epochs must be >= 1");
    if (std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
      throw ContractError("split fractions must sum to 1");
    }
    if (threads < 1) throw ContractError("threads must be >= 1");
    loss.validate();
  }
};

inline Json to_json(const TrainRunConfig& c) {
  return {{"epochs", c.epochs},
          {"report_epoch", c.report_epoch},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"train_fraction", c.train_fraction},
          {"test_fraction", c.test_fraction},
          {"threads", c.threads},
          {"eval_train", c.eval_train},
          {"loss_weights", {{"mode", c.loss.mode_weight}, {"purpose", c.loss.purpose_weight}}},
          {"adam",
           {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

inline TrainRunConfig train_run_config_from_json(const Json& j, TrainRunConfig c = {}) {
  static const std::set<std::string> known = {"epochs",        "report_epoch", "batch_size",
                                              "seed",          "train_fraction", "test_fraction",
                                              "threads",       "eval_train",   "loss_weights",
                                              "adam"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ContractError("unknown training key '" + k + "'");
  }
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"];
    if (j.contains("report_epoch")) c.report_epoch = j["report_epoch"];
    if (j.contains("batch_size")) c.batch_size = j["batch_size"];
    if (j.contains("seed")) c.seed = j["seed"];
    if (j.contains("train_fraction")) c.train_fraction = j["train_fraction"];
    if (j.contains("test_fraction")) c.test_fraction = j["test_fraction"];
    if (j.contains("threads")) c.threads = j["threads"];
    if (j.contains("eval_train")) c.eval_train = j["eval_train"];
    if (j.contains("loss_weights")) {
      c.loss.mode_weight = j["loss_weights"].value("mode", c.loss.mode_weight);
      c.loss.purpose_weight = j["loss_weights"].value("purpose", c.loss.purpose_weight);
    }
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      c.adam.lr = a.value("lr", c.adam.lr);
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
    }
  } catch (const Json::exception& e) {
    throw ContractError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Evaluation

inline std::string learner_tag(const NetworkConfig& cfg) {
  return cfg.heads == Heads::both ? "multi" : "single";
}

// Records carrying every label the configured heads need.
inline std::vector<const TripRecord*> eligible_records(const NetworkConfig& cfg,
                                                       const std::vector<TripRecord>& records,
                                                       const std::string& split = "") {
  std::vector<const TripRecord*> out;
  for (const auto& r : records) {
    if (!split.empty() && r.split != split) continue;
    if (cfg.has_mode() && !r.mode) continue;
    if (cfg.has_purpose() && !r.purpose) continue;
    out.push_back(&r);
  }
  return out;
}

struct Evaluation {
  std::optional<ConfusionMatrix> mode;
  std::optional<ConfusionMatrix> purpose;
};

inline Evaluation confusion(const NetworkConfig& cfg, const NetworkWeights& w,
                            const std::vector<const TripRecord*>& records,
                            std::size_t chunk = 256) {
  if (records.empty()) throw ContractError("cannot evaluate an empty record set");
  Evaluation ev;
  if (cfg.has_mode()) ev.mode = ConfusionMatrix(cfg.mode_classes);
  if (cfg.has_purpose()) ev.purpose = ConfusionMatrix(cfg.purpose_classes);
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const std::vector<const TripRecord*> part(
        records.begin() + static_cast<std::ptrdiff_t>(start),
        records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), start + chunk)));
    const Batch b = make_batch(part, cfg.sequence_length);
    const Predictions p = predict(cfg, w, b);
    for (std::size_t r = 0; r < part.size(); ++r) {
      if (ev.mode) {
        if (!part[r]->mode) throw ContractError("trip " + part[r]->trip_id + " lacks a mode label");
        ev.mode->add(*part[r]->mode, (*p.mode)[r]);
      }
      if (ev.purpose) {
        if (!part[r]->purpose) {
          throw ContractError("trip " + part[r]->trip_id + " lacks a purpose label");
        }
        ev.purpose->add(*part[r]->purpose, (*p.purpose)[r]);
      }
    }
  }
  return ev;
}

inline std::vector<MetricsReport> evaluate(const NetworkConfig& cfg, const NetworkWeights& w,
                                           const std::vector<const TripRecord*>& records,
                                           std::size_t epoch, Averaging avg = Averaging::macro) {
  const Evaluation ev = confusion(cfg, w, records);
  std::vector<MetricsReport> out;
  const std::string learner = learner_tag(cfg);
  const std::string model = display_name(cfg.cell);
  if (ev.mode) out.push_back(make_report(*ev.mode, learner, "mode", model, epoch, avg));
  if (ev.purpose) out.push_back(make_report(*ev.purpose, learner, "purpose", model, epoch, avg));
  return out;
}

inline Json log_line(const MetricsReport& r, const std::string& split, double loss) {
  return {{"epoch", r.epoch},       {"split", split},         {"learner", r.learner},
          {"task", r.task},         {"model", r.model},       {"accuracy", r.accuracy},
          {"precision", r.precision}, {"recall", r.recall},   {"f1", r.f1},
          {"loss", loss}};
}

// ---------------------------------------------------------------------------
// Training

struct EpochSummary {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean weighted loss over train examples
  std::vector<MetricsReport> test;
  std::vector<MetricsReport> train;  // only with eval_train
};

struct TrainResult {
  NetworkWeights weights;  // after the last epoch run
  std::optional<NetworkWeights> report_snapshot;
  std::optional<NetworkWeights> best_snapshot;
  std::size_t best_epoch = 0;
  double best_f1 = -1.0;
  std::vector<EpochSummary> epochs;
  std::vector<Json> log;  // one object per (epoch, split, task)
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
};

struct TrainHooks {
  // Called after each epoch; returning false stops the run.
  std::function<bool(const EpochSummary&)> on_epoch;
  // Called after each optimizer step with the weights just updated.
  std::function<void(std::size_t epoch, std::size_t step, const NetworkWeights&)> on_step;
};

namespace detail {

struct ShardResult {
  NetworkWeights grads;
  double loss = 0.0;
};

inline ShardResult shard_gradients(const NetworkConfig& cfg, const NetworkWeights& w,
                                   const std::vector<const TripRecord*>& rows,
                                   const LossSpec& loss, double scale, const DropoutSource& src) {
  const Batch b = make_batch(rows, cfg.sequence_length);
  ForwardCache cache;
  const HeadOutputs out = forward(cfg, w, b, true, src, &cache);
  HeadGrads hg;
  ShardResult res;
  if (out.mode) {
    std::vector<std::size_t> labels;
    for (const auto* r : rows) labels.push_back(*r->mode);
    auto bl = cross_entropy_rows(*out.mode, labels, loss.mode_weight * scale);
    res.loss += loss.mode_weight * bl.sum;
    hg.mode = std::move(bl.dlogits);
  }
  if (out.purpose) {
    std::vector<std::size_t> labels;
    for (const auto* r : rows) labels.push_back(*r->purpose);
    auto bl = cross_entropy_rows(*out.purpose, labels, loss.purpose_weight * scale);
    res.loss += loss.purpose_weight * bl.sum;
    hg.purpose = std::move(bl.dlogits);
  }
  res.grads = backward(cfg, w, cache, hg);
  return res;
}

}  // namespace detail

inline std::uint64_t dropout_seed(std::uint64_t seed, std::size_t epoch) {
  return hash_combine(hash_combine(seed, hash_string("dropout")), epoch);
}

// Mean-loss gradient for one mini-batch. With threads > 1 the batch is cut
// into contiguous shards whose gradients are summed in shard order.
inline detail::ShardResult batch_gradients(const NetworkConfig& cfg, const NetworkWeights& w,
                                           const std::vector<const TripRecord*>& rows,
                                           const LossSpec& loss, const DropoutSource& src,
                                           std::size_t threads = 1) {
  const double scale = 1.0 / static_cast<double>(rows.size());
  if (threads <= 1 || rows.size() < 2) {
    return detail::shard_gradients(cfg, w, rows, loss, scale, src);
  }
  const std::size_t per = (rows.size() + threads - 1) / threads;
  const std::size_t shards = (rows.size() + per - 1) / per;
  std::vector<detail::ShardResult> parts(shards);
  std::vector<std::thread> pool;
  for (std::size_t s = 0; s < shards; ++s) {
    const std::size_t lo = s * per;
    const std::size_t hi = std::min(rows.size(), lo + per);
    pool.emplace_back([&, s, lo, hi] {
      const std::vector<const TripRecord*> part(rows.begin() + static_cast<std::ptrdiff_t>(lo),
                                                rows.begin() + static_cast<std::ptrdiff_t>(hi));
      DropoutSource shard_src = src;
      shard_src.row_offset += lo;
      parts[s] = detail::shard_gradients(cfg, w, part, loss, scale, shard_src);
    });
  }
  for (auto& t : pool) t.join();
  detail::ShardResult total = std::move(parts[0]);
  auto dst = params_of(total.grads);
  for (std::size_t s = 1; s < shards; ++s) {
    auto src_params = params_of(parts[s].grads);
    for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].value += *src_params[k].value;
    total.loss += parts[s].loss;
  }
  return total;
}

inline TrainResult train(const TrainRunConfig& run, const NetworkConfig& cfg, const Dataset& data,
                         const TrainHooks& hooks = {}) {
  run.validate();
  cfg.validate();
  if (data.schema.categorical != cfg.embedding) {
    throw ContractError("dataset categorical schema does not match the network embedding schema");
  }
  if (data.schema.numeric_columns.size() != cfg.numeric_features) {
    throw ContractError("dataset has " + std::to_string(data.schema.numeric_columns.size()) +
                        " numeric columns, network expects " + std::to_string(cfg.numeric_features));
  }
  if (data.schema.sequence_length != cfg.sequence_length) {
    throw ContractError("dataset sequence length differs from the network's");
  }
  const auto train_set = eligible_records(cfg, data.records, "train");
  const auto test_set = eligible_records(cfg, data.records, "test");
  if (train_set.empty()) throw ContractError("empty train split");
  if (test_set.empty()) throw ContractError("empty test split");

  TrainResult res;
  res.train_examples = train_set.size();
  res.test_examples = test_set.size();
  res.weights = init_network(cfg, run.seed);
  AdamState adam = run.adam;
  adam.m.clear();
  adam.v.clear();
  adam.step = 0;
  auto params = params_of(res.weights);

  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= run.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(hash_combine(hash_combine(run.seed, hash_string("shuffle")), epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += run.batch_size) {
      const std::size_t end = std::min(order.size(), start + run.batch_size);
      std::vector<const TripRecord*> rows;
      for (std::size_t i = start; i < end; ++i) rows.push_back(train_set[order[i]]);
      const DropoutSource src{dropout_seed(run.seed, epoch), start};
      auto g = batch_gradients(cfg, res.weights, rows, run.loss, src, run.threads);
      loss_sum += g.loss;
      adam_step(adam, params, params_of(g.grads));
      ++step;
      if (hooks.on_step) hooks.on_step(epoch, step, res.weights);
    }

    EpochSummary summary;
    summary.epoch = epoch;
    summary.train_loss = loss_sum / static_cast<double>(train_set.size());
    summary.test = evaluate(cfg, res.weights, test_set, epoch);
    if (run.eval_train) summary.train = evaluate(cfg, res.weights, train_set, epoch);
    for (const auto& r : summary.test) res.log.push_back(log_line(r, "test", summary.train_loss));
    for (const auto& r : summary.train) res.log.push_back(log_line(r, "train", summary.train_loss));

    double mean_f1 = 0.0;
    for (const auto& r : summary.test) mean_f1 += r.f1;
    mean_f1 /= static_cast<double>(summary.test.size());
    if (mean_f1 > res.best_f1) {
      res.best_f1 = mean_f1;
      res.best_epoch = epoch;
      res.best_snapshot = res.weights;
    }
    if (epoch == run.report_epoch) res.report_snapshot = res.weights;
    res.epochs.push_back(summary);
    if (hooks.on_epoch && !hooks.on_epoch(res.epochs.back())) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gradient checking

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is (near) zero from turning round-off into huge ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Central difference of f with respect to one entry of x.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

// Largest relative error between `analytic` and central differences of f
// over all entries of `param`.
inline double max_relative_error(const std::function<double()>& f, Matrix& param,
                                 const Matrix& analytic, double h = 1e-5, double floor = 1e-5) {
  param.require_same(analytic, "gradient check");
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double n = central_difference(f, param[i], h);
    worst = std::max(worst, relative_error(analytic[i], n, floor));
  }
  return worst;
}

struct GradCheckEntry {
  std::string block;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  std::vector<GradCheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

using BackwardFn = std::function<NetworkWeights(const NetworkConfig&, const NetworkWeights&,
                                                const ForwardCache&, const HeadGrads&)>;

struct GradCheckOptions {
  std::uint64_t seed = 1;
  std::size_t batch = 3;
  double tolerance = 1e-4;
  double step = 1e-5;
  double floor = 1e-5;
  LossSpec loss;
};

// Random toy records matching cfg: end-padded trajectories of decreasing
// length, random codes, numerics and labels.
inline std::vector<TripRecord> toy_records(const NetworkConfig& cfg, std::size_t n,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<TripRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    TripRecord& r = out[i];
    r.trip_id = "toy_" + std::to_string(i);
    r.split = "train";
    r.trajectory.steps.assign(cfg.sequence_length, StepFeatures{});
    r.trajectory.length = std::max<std::size_t>(1, cfg.sequence_length - (i % cfg.sequence_length));
    for (std::size_t t = 0; t < r.trajectory.length; ++t)
      for (auto& v : r.trajectory.steps[t]) v = u(rng);
    for (const auto& a : cfg.embedding.attributes()) r.categorical.push_back(rng() % a.cardinality());
    for (std::size_t k = 0; k < cfg.numeric_features; ++k) r.numeric.push_back(u(rng));
    r.mode = rng() % cfg.mode_classes;
    r.purpose = rng() % cfg.purpose_classes;
  }
  return out;
}

// Compares `backward_fn` against central differences of the summed head
// losses for every parameter block, with dropout masks frozen.
inline GradCheckReport grad_check(const NetworkConfig& cfg, const GradCheckOptions& opt = {},
                                  const BackwardFn& backward_fn = backward) {
  NetworkWeights w = init_network(cfg, opt.seed);
  // Non-zero biases so no block sits at a special point.
  {
    Rng rng(hash_combine(opt.seed, 99));
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (auto& p : params_of(w))
      if (p.name.ends_with(".b")) for (double& v : p.value->values()) v += u(rng);
  }
  const auto records = toy_records(cfg, opt.batch, hash_combine(opt.seed, 7));
  std::vector<const TripRecord*> rows;
  for (const auto& r : records) rows.push_back(&r);
  const Batch b = make_batch(rows, cfg.sequence_length);
  const DropoutSource frozen{hash_combine(opt.seed, 11), 0};
  const double scale = 1.0 / static_cast<double>(rows.size());

  auto loss_of = [&](const HeadOutputs& out) {
    double l = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (out.mode) l += opt.loss.mode_weight * -std::log((*out.mode)(r, *rows[r]->mode));
      if (out.purpose) l += opt.loss.purpose_weight * -std::log((*out.purpose)(r, *rows[r]->purpose));
    }
    return l * scale;
  };

  ForwardCache cache;
  const HeadOutputs out = forward(cfg, w, b, true, frozen, &cache);
  HeadGrads hg;
  if (out.mode) {
    std::vector<std::size_t> labels;
    for (const auto* r : rows) labels.push_back(*r->mode);
    hg.mode = cross_entropy_rows(*out.mode, labels, opt.loss.mode_weight * scale).dlogits;
  }
  if (out.purpose) {
    std::vector<std::size_t> labels;
    for (const auto* r : rows) labels.push_back(*r->purpose);
    hg.purpose = cross_entropy_rows(*out.purpose, labels, opt.loss.purpose_weight * scale).dlogits;
  }
  NetworkWeights g = backward_fn(cfg, w, cache, hg);

  const std::function<double()> f = [&] { return loss_of(forward(cfg, w, b, true, frozen)); };
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  auto wp = params_of(w);
  auto gp = params_of(g);
  for (std::size_t k = 0; k < wp.size(); ++k) {
    GradCheckEntry e;
    e.block = wp[k].name;
    e.entries = wp[k].value->size();
    e.max_rel_error = max_relative_error(f, *wp[k].value, *gp[k].value, opt.step, opt.floor);
    e.pass = e.max_rel_error < opt.tolerance;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace tripnet
