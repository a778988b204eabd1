// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// The multi-input, multi-output classifier: a recurrent branch over the
// trajectory, a dense numeric branch, a categorical embedding branch, a
// fused dense block, a shared trunk and one or two softmax heads.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <zlib.h>

#include "tripnet/cells.hpp"
#include "tripnet/embedding.hpp"
#include "tripnet/error.hpp"
#include "tripnet/records.hpp"
#include "tripnet/rng.hpp"
#include "tripnet/tensor.hpp"

namespace tripnet {

enum class CellKind { rnn, lstm, gru, bi_gru, bi_lstm };
enum class Heads { mode, purpose, both };
enum class Pooling { last, mean };

inline std::string to_string(CellKind k) {
  switch (k) {
    case CellKind::rnn: return "rnn";
    case CellKind::lstm: return "lstm";
    case CellKind::gru: return "gru";
    case CellKind::bi_gru: return "bi-gru";
    case CellKind::bi_lstm: return "bi-lstm";
  }
  return "?";
}

inline CellKind cell_kind_from_string(const std::string& s) {
  for (auto k : {CellKind::rnn, CellKind::lstm, CellKind::gru, CellKind::bi_gru, CellKind::bi_lstm})
    if (to_string(k) == s) return k;
  throw ContractError("unknown cell kind '" + s + "' (rnn, lstm, gru, bi-gru, bi-lstm)");
}

// Table-style display name.
inline std::string display_name(CellKind k) {
  switch (k) {
    case CellKind::rnn: return "RNN";
    case CellKind::lstm: return "LSTM";
    case CellKind::gru: return "GRU";
    case CellKind::bi_gru: return "Bi-GRU";
    case CellKind::bi_lstm: return "Bi-LSTM";
  }
  return "?";
}

inline std::string to_string(Heads h) {
  switch (h) {
    case Heads::mode: return "mode";
    case Heads::purpose: return "purpose";
    case Heads::both: return "both";
  }
  return "?";
}

inline Heads heads_from_string(const std::string& s) {
  for (auto h : {Heads::mode, Heads::purpose, Heads::both})
    if (to_string(h) == s) return h;
  throw ContractError("unknown heads '" + s + "' (mode, purpose, both)");
}

inline std::string to_string(Pooling p) { return p == Pooling::last ? "last" : "mean"; }
inline Pooling pooling_from_string(const std::string& s) {
  if (s == "last") return Pooling::last;
  if (s == "mean") return Pooling::mean;
  throw ContractError("unknown pooling '" + s + "' (last, mean)");
}

inline std::string to_string(const Activation& a) {
  switch (a.kind) {
    case Activation::Kind::identity: return "identity";
    case Activation::Kind::sigmoid: return "sigmoid";
    case Activation::Kind::tanh: return "tanh";
    case Activation::Kind::relu: return "relu";
    case Activation::Kind::leaky_relu: return "leaky_relu";
    case Activation::Kind::softmax_rows: return "softmax";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s, double alpha = 0.05) {
  if (s == "identity") return Activation::identity();
  if (s == "sigmoid") return Activation::sigmoid();
  if (s == "tanh") return Activation::tanh();
  if (s == "relu") return Activation::relu();
  if (s == "leaky_relu") return Activation::leaky_relu(alpha);
  throw ContractError("unknown activation '" + s + "'");
}

struct NetworkConfig {
  CellKind cell = CellKind::gru;
  std::size_t recurrent_layers = 3;
  std::size_t recurrent_width = 70;
  double recurrent_dropout = 0.2;
  Activation recurrent_activation = Activation::tanh();
  Pooling pooling = Pooling::last;
  bool forget_bias_one = false;

  std::vector<std::size_t> numeric_widths = {256};
  std::vector<std::size_t> fused_widths = {128, 128, 128};
  double fused_dropout = 0.5;
  std::vector<std::size_t> trunk_widths = {64, 64, 64};
  double trunk_dropout = 0.5;
  Activation dense_activation = Activation::leaky_relu(0.05);

  Heads heads = Heads::both;
  std::size_t mode_classes = 4;
  std::size_t purpose_classes = 6;

  std::size_t sequence_length = kSequenceLength;
  std::size_t sequence_features = kStepFeatures;
  std::size_t numeric_features = 50;
  EmbeddingSchema embedding = default_embedding_schema();

  bool has_mode() const { return heads != Heads::purpose; }
  bool has_purpose() const { return heads != Heads::mode; }
  bool bidirectional() const { return cell == CellKind::bi_gru || cell == CellKind::bi_lstm; }
  std::size_t recurrent_output_width() const {
    return bidirectional() ? 2 * recurrent_width : recurrent_width;
  }
  std::size_t numeric_output_width() const {
    return numeric_widths.empty() ? numeric_features : numeric_widths.back();
  }
  std::size_t fused_output_width() const {
    return fused_widths.empty() ? numeric_output_width() + embedding.output_width()
                                : fused_widths.back();
  }
  std::size_t trunk_output_width() const {
    return trunk_widths.empty() ? recurrent_output_width() + fused_output_width()
                                : trunk_widths.back();
  }

  void validate() const {
    auto widths = [](const std::vector<std::size_t>& ws, const char* what) {
      for (auto w : ws)
        if (w < 1) throw ContractError(std::string(what) + " widths must be >= 1");
    };
    if (recurrent_layers < 1) throw ContractError("need at least one recurrent layer");
    if (recurrent_width < 1) throw ContractError("recurrent width must be >= 1");
    widths(numeric_widths, "numeric");
    widths(fused_widths, "fused");
    widths(trunk_widths, "trunk");
    for (double p : {recurrent_dropout, fused_dropout, trunk_dropout}) {
      if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout must lie in [0, 1)");
    }
    if (mode_classes < 1 || purpose_classes < 1) throw ContractError("class counts must be >= 1");
    if (sequence_length < 1 || sequence_features < 1) {
      throw ContractError("sequence length and features must be >= 1");
    }
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline Json to_json(const Activation& a) {
  Json j = {{"kind", to_string(a)}};
  if (a.kind == Activation::Kind::leaky_relu) j["alpha"] = a.alpha;
  return j;
}

inline Activation activation_from_json(const Json& j) {
  return activation_from_string(j.at("kind").get<std::string>(), j.value("alpha", 0.05));
}

inline Json to_json(const NetworkConfig& c) {
  return {{"cell", to_string(c.cell)},
          {"recurrent_layers", c.recurrent_layers},
          {"recurrent_width", c.recurrent_width},
          {"recurrent_dropout", c.recurrent_dropout},
          {"recurrent_activation", to_json(c.recurrent_activation)},
          {"pooling", to_string(c.pooling)},
          {"forget_bias_one", c.forget_bias_one},
          {"numeric_widths", c.numeric_widths},
          {"fused_widths", c.fused_widths},
          {"fused_dropout", c.fused_dropout},
          {"trunk_widths", c.trunk_widths},
          {"trunk_dropout", c.trunk_dropout},
          {"dense_activation", to_json(c.dense_activation)},
          {"heads", to_string(c.heads)},
          {"mode_classes", c.mode_classes},
          {"purpose_classes", c.purpose_classes},
          {"sequence_length", c.sequence_length},
          {"sequence_features", c.sequence_features},
          {"numeric_features", c.numeric_features},
          {"embedding", to_json(c.embedding)}};
}

// Keys absent from j keep the values already in `base`. Unknown keys are
// rejected so typos do not silently fall back to defaults.
inline NetworkConfig network_config_from_json(const Json& j, NetworkConfig base = {}) {
  static const std::set<std::string> known = {
      "cell",          "recurrent_layers", "recurrent_width",   "recurrent_dropout",
      "recurrent_activation", "pooling",   "forget_bias_one",   "numeric_widths",
      "fused_widths",  "fused_dropout",    "trunk_widths",      "trunk_dropout",
      "dense_activation", "heads",         "mode_classes",      "purpose_classes",
      "sequence_length", "sequence_features", "numeric_features", "embedding"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ContractError("unknown network key '" + k + "'");
  }
  NetworkConfig c = std::move(base);
  try {
    if (j.contains("cell")) c.cell = cell_kind_from_string(j["cell"].get<std::string>());
    if (j.contains("recurrent_layers")) c.recurrent_layers = j["recurrent_layers"];
    if (j.contains("recurrent_width")) c.recurrent_width = j["recurrent_width"];
    if (j.contains("recurrent_dropout")) c.recurrent_dropout = j["recurrent_dropout"];
    if (j.contains("recurrent_activation")) {
      c.recurrent_activation = activation_from_json(j["recurrent_activation"]);
    }
    if (j.contains("pooling")) c.pooling = pooling_from_string(j["pooling"]);
    if (j.contains("forget_bias_one")) c.forget_bias_one = j["forget_bias_one"];
    if (j.contains("numeric_widths")) c.numeric_widths = j["numeric_widths"].get<std::vector<std::size_t>>();
    if (j.contains("fused_widths")) c.fused_widths = j["fused_widths"].get<std::vector<std::size_t>>();
    if (j.contains("fused_dropout")) c.fused_dropout = j["fused_dropout"];
    if (j.contains("trunk_widths")) c.trunk_widths = j["trunk_widths"].get<std::vector<std::size_t>>();
    if (j.contains("trunk_dropout")) c.trunk_dropout = j["trunk_dropout"];
    if (j.contains("dense_activation")) c.dense_activation = activation_from_json(j["dense_activation"]);
    if (j.contains("heads")) c.heads = heads_from_string(j["heads"]);
    if (j.contains("mode_classes")) c.mode_classes = j["mode_classes"];
    if (j.contains("purpose_classes")) c.purpose_classes = j["purpose_classes"];
    if (j.contains("sequence_length")) c.sequence_length = j["sequence_length"];
    if (j.contains("sequence_features")) c.sequence_features = j["sequence_features"];
    if (j.contains("numeric_features")) c.numeric_features = j["numeric_features"];
    if (j.contains("embedding")) c.embedding = embedding_schema_from_json(j["embedding"]);
  } catch (const Json::exception& e) {
    throw ContractError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Weights

struct DenseLayer {
  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out) : W(in, out), b(1, out) {}

  void collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + "W", &W});
    out.push_back({prefix + "b", &b});
  }

  Matrix W;
  Matrix b;
};

using RecurrentStack =
    std::variant<std::vector<Unidirectional<RnnCellWeights>>, std::vector<Unidirectional<LstmCellWeights>>,
                 std::vector<Unidirectional<GruCellWeights>>, std::vector<Bidirectional<GruCellWeights>>,
                 std::vector<Bidirectional<LstmCellWeights>>>;

using RecurrentRun =
    std::variant<StackRun<Unidirectional<RnnCellWeights>>, StackRun<Unidirectional<LstmCellWeights>>,
                 StackRun<Unidirectional<GruCellWeights>>, StackRun<Bidirectional<GruCellWeights>>,
                 StackRun<Bidirectional<LstmCellWeights>>>;

struct NetworkWeights {
  RecurrentStack recurrent;
  std::vector<DenseLayer> numeric;
  EmbeddingTables embedding;
  std::vector<DenseLayer> fused;
  std::vector<DenseLayer> trunk;
  std::optional<DenseLayer> mode_head;
  std::optional<DenseLayer> purpose_head;

  void collect(const std::string& prefix, ParamList& out) {
    std::visit(
        [&](auto& layers) {
          for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].collect(prefix + "rec." + std::to_string(i) + ".", out);
          }
        },
        recurrent);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      numeric[i].collect(prefix + "numeric." + std::to_string(i) + ".", out);
    }
    embedding.collect(prefix + "embed.", out);
    for (std::size_t i = 0; i < fused.size(); ++i) {
      fused[i].collect(prefix + "fused." + std::to_string(i) + ".", out);
    }
    for (std::size_t i = 0; i < trunk.size(); ++i) {
      trunk[i].collect(prefix + "trunk." + std::to_string(i) + ".", out);
    }
    if (mode_head) mode_head->collect(prefix + "head.mode.", out);
    if (purpose_head) purpose_head->collect(prefix + "head.purpose.", out);
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : params_of(*this)) n += p.value->size();
    return n;
  }
};

namespace detail {

template <class Layer>
std::vector<Layer> make_layers(const NetworkConfig& cfg) {
  using W = typename Layer::Weights;
  std::vector<Layer> layers;
  std::size_t in = cfg.sequence_features;
  for (std::size_t i = 0; i < cfg.recurrent_layers; ++i) {
    W cell(in, cfg.recurrent_width, cfg.recurrent_activation);
    if constexpr (Layer::is_bidirectional) {
      layers.push_back(Layer{cell, cell});
    } else {
      layers.push_back(Layer{cell});
    }
    in = layers.back().output_size();
  }
  return layers;
}

inline std::vector<DenseLayer> make_dense(std::size_t in, const std::vector<std::size_t>& widths) {
  std::vector<DenseLayer> out;
  for (auto w : widths) {
    out.emplace_back(in, w);
    in = w;
  }
  return out;
}

}  // namespace detail

// Zero-valued weights with the shapes implied by cfg.
inline NetworkWeights shape_network(const NetworkConfig& cfg) {
  cfg.validate();
  NetworkWeights w;
  switch (cfg.cell) {
    case CellKind::rnn: w.recurrent = detail::make_layers<Unidirectional<RnnCellWeights>>(cfg); break;
    case CellKind::lstm: w.recurrent = detail::make_layers<Unidirectional<LstmCellWeights>>(cfg); break;
    case CellKind::gru: w.recurrent = detail::make_layers<Unidirectional<GruCellWeights>>(cfg); break;
    case CellKind::bi_gru: w.recurrent = detail::make_layers<Bidirectional<GruCellWeights>>(cfg); break;
    case CellKind::bi_lstm: w.recurrent = detail::make_layers<Bidirectional<LstmCellWeights>>(cfg); break;
  }
  w.numeric = detail::make_dense(cfg.numeric_features, cfg.numeric_widths);
  w.embedding = EmbeddingTables(cfg.embedding);
  w.fused = detail::make_dense(cfg.numeric_output_width() + cfg.embedding.output_width(),
                               cfg.fused_widths);
  w.trunk = detail::make_dense(cfg.recurrent_output_width() + cfg.fused_output_width(),
                               cfg.trunk_widths);
  if (cfg.has_mode()) w.mode_head = DenseLayer(cfg.trunk_output_width(), cfg.mode_classes);
  if (cfg.has_purpose()) w.purpose_head = DenseLayer(cfg.trunk_output_width(), cfg.purpose_classes);
  return w;
}

// Every value is a function of (seed, parameter name) only, so networks that
// differ only in their heads start from identical shared weights.
inline NetworkWeights init_network(const NetworkConfig& cfg, std::uint64_t seed) {
  NetworkWeights w = shape_network(cfg);
  for (auto& p : params_of(w)) {
    if (p.name.starts_with("embed.")) {
      fill_uniform(*p.value, 0.05, seed, p.name);
    } else if (p.name.ends_with(".b")) {
      const bool forget = cfg.forget_bias_one && p.name.ends_with("forget.b");
      p.value->fill(forget ? 1.0 : 0.0);
    } else {
      fill_glorot(*p.value, seed, p.name);
    }
  }
  return w;
}

inline NetworkWeights zeros_like(const NetworkWeights& w) {
  NetworkWeights z = w;
  for (auto& p : params_of(z)) p.value->set_zero();
  return z;
}

// Throws DimensionError naming the first parameter whose shape differs from
// what cfg implies.
inline void check_compatible(const NetworkConfig& cfg, const NetworkWeights& w) {
  NetworkWeights expect = shape_network(cfg);
  auto a = params_of(expect);
  auto b = params_of(const_cast<NetworkWeights&>(w));
  if (a.size() != b.size()) {
    throw DimensionError("weights hold " + std::to_string(b.size()) + " parameters, config implies " +
                         std::to_string(a.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !a[i].value->same_shape(*b[i].value)) {
      throw DimensionError("parameter " + b[i].name + " " + b[i].value->shape() +
                           " does not match config (" + a[i].name + " " + a[i].value->shape() + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  std::vector<Matrix> steps;  // sequence_length matrices of rows x features
  StepMask mask;
  Matrix numeric;
  CategoryCodes codes;
  std::vector<std::optional<std::size_t>> mode;
  std::vector<std::optional<std::size_t>> purpose;

  std::size_t size() const { return numeric.rows(); }
};

inline Batch make_batch(const std::vector<const TripRecord*>& records, std::size_t sequence_length) {
  const std::size_t rows = records.size();
  if (rows == 0) throw ContractError("empty batch");
  Batch b;
  const std::size_t nnum = records.front()->numeric.size();
  b.steps.assign(sequence_length, Matrix(rows, kStepFeatures));
  std::vector<std::size_t> lengths(rows);
  b.numeric = Matrix(rows, nnum);
  for (std::size_t r = 0; r < rows; ++r) {
    const TripRecord& rec = *records[r];
    if (rec.trajectory.steps.size() != sequence_length) {
      throw ContractError("trip " + rec.trip_id + " has " +
                          std::to_string(rec.trajectory.steps.size()) + " steps, network expects " +
                          std::to_string(sequence_length));
    }
    lengths[r] = rec.trajectory.length;
    for (std::size_t t = 0; t < rec.trajectory.length; ++t) {
      for (std::size_t k = 0; k < kStepFeatures; ++k) b.steps[t](r, k) = rec.trajectory.steps[t][k];
    }
    if (rec.numeric.size() != nnum) throw DimensionError("numeric feature counts differ in batch");
    for (std::size_t k = 0; k < nnum; ++k) b.numeric(r, k) = rec.numeric[k];
    b.codes.push_back(rec.categorical);
    b.mode.push_back(rec.mode);
    b.purpose.push_back(rec.purpose);
  }
  b.mask = StepMask::from_lengths(lengths, sequence_length);
  return b;
}

// ---------------------------------------------------------------------------
// Forward and backward

struct DenseCache {
  Matrix x, pre, y, drop;  // drop empty when dropout was off
};

struct HeadCache {
  Matrix x, logits, probs;
};

struct ForwardCache {
  bool training = false;
  RecurrentRun recurrent;
  std::vector<std::size_t> lengths;
  Matrix summary_drop;
  std::vector<DenseCache> numeric;
  EmbeddingCache embedding;
  std::vector<DenseCache> fused;
  std::vector<DenseCache> trunk;
  std::optional<HeadCache> mode_head;
  std::optional<HeadCache> purpose_head;
};

struct HeadOutputs {
  std::optional<Matrix> mode;     // rows of class probabilities
  std::optional<Matrix> purpose;
};

// Gradients w.r.t. each head's pre-softmax logits.
struct HeadGrads {
  std::optional<Matrix> mode;
  std::optional<Matrix> purpose;
};

namespace dropout_site {
inline constexpr std::uint64_t recurrent = 1;
inline constexpr std::uint64_t summary = 2;
inline constexpr std::uint64_t fused = 100;
inline constexpr std::uint64_t trunk = 200;
}  // namespace dropout_site

namespace detail {

inline Matrix dense_chain(const std::vector<DenseLayer>& layers, Matrix x, const Activation& act,
                          double dropout, bool training, const DropoutSource& src,
                          std::uint64_t site, std::vector<DenseCache>* caches) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    DenseCache c;
    c.x = std::move(x);
    c.pre = matmul(c.x, layers[i].W);
    add_row_inplace(c.pre, layers[i].b);
    c.y = activate(act, c.pre);
    x = c.y;
    if (training && dropout > 0.0) {
      c.drop = src.mask(dropout, site + i, 0, x.rows(), x.cols());
      x = hadamard(x, c.drop);
    }
    if (caches) caches->push_back(std::move(c));
  }
  return x;
}

// Returns the gradient w.r.t. the chain input.
inline Matrix dense_chain_backward(const std::vector<DenseLayer>& layers,
                                   const std::vector<DenseCache>& caches, const Activation& act,
                                   Matrix d, std::vector<DenseLayer>& grads) {
  for (std::size_t i = layers.size(); i-- > 0;) {
    const DenseCache& c = caches[i];
    if (!c.drop.empty()) d = hadamard(d, c.drop);
    Matrix dpre = activate_backward(act, c.pre, c.y, d);
    matmul_tn_acc(c.x, dpre, grads[i].W);
    add_col_sums(dpre, grads[i].b);
    Matrix dx(c.x.rows(), c.x.cols());
    matmul_nt_acc(dpre, layers[i].W, dx);
    d = std::move(dx);
  }
  return d;
}

inline HeadCache head_forward(const DenseLayer& head, const Matrix& x) {
  HeadCache h;
  h.x = x;
  h.logits = matmul(x, head.W);
  add_row_inplace(h.logits, head.b);
  h.probs = activate(Activation::softmax_rows(), h.logits);
  return h;
}

inline void head_backward(const DenseLayer& head, const HeadCache& c, const Matrix& dlogits,
                          DenseLayer& grads, Matrix& dx) {
  if (!dlogits.same_shape(c.logits)) {
    throw DimensionError("head upstream " + dlogits.shape() + " vs logits " + c.logits.shape());
  }
  matmul_tn_acc(c.x, dlogits, grads.W);
  add_col_sums(dlogits, grads.b);
  matmul_nt_acc(dlogits, head.W, dx);
}

inline Matrix mean_pool(const std::vector<Matrix>& outputs, const std::vector<std::size_t>& lengths) {
  Matrix m(outputs.front().rows(), outputs.front().cols());
  for (std::size_t r = 0; r < lengths.size(); ++r) {
    auto row = m.row(r);
    for (std::size_t t = 0; t < lengths[r]; ++t) {
      const auto o = outputs[t].row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += o[c];
    }
    if (lengths[r] > 0) {
      for (double& v : row) v /= static_cast<double>(lengths[r]);
    }
  }
  return m;
}

}  // namespace detail

// Runs the full graph. In training mode dropout masks come from `dropout`
// and, when `cache` is given, everything backward needs is kept there.
inline HeadOutputs forward(const NetworkConfig& cfg, const NetworkWeights& w, const Batch& batch,
                           bool training, const DropoutSource& dropout = {},
                           ForwardCache* cache = nullptr) {
  if (batch.steps.size() != cfg.sequence_length) {
    throw ContractError("batch has " + std::to_string(batch.steps.size()) +
                        " steps, network expects " + std::to_string(cfg.sequence_length));
  }
  if (batch.numeric.cols() != cfg.numeric_features) {
    throw DimensionError("batch has " + std::to_string(batch.numeric.cols()) +
                         " numeric features, network expects " +
                         std::to_string(cfg.numeric_features));
  }
  if (cache) {
    *cache = ForwardCache{};
    cache->training = training;
    cache->lengths = batch.mask.lengths();
  }
  Matrix summary = std::visit(
      [&](const auto& layers) {
        auto run = stack(layers, batch.steps, batch.mask, cfg.recurrent_dropout, training, dropout,
                         dropout_site::recurrent);
        Matrix s = cfg.pooling == Pooling::last
                       ? run.top_final
                       : detail::mean_pool(run.top_outputs, batch.mask.lengths());
        if (cache) cache->recurrent = std::move(run);
        return s;
      },
      w.recurrent);

  if (training && cfg.recurrent_dropout > 0.0) {
    Matrix m = dropout.mask(cfg.recurrent_dropout, dropout_site::summary, 0, summary.rows(),
                            summary.cols());
    summary = hadamard(summary, m);
    if (cache) cache->summary_drop = std::move(m);
  }

  Matrix num = detail::dense_chain(w.numeric, batch.numeric, cfg.dense_activation, 0.0, training,
                                   dropout, 0, cache ? &cache->numeric : nullptr);
  Matrix emb = embed(cfg.embedding, w.embedding, batch.codes, cache ? &cache->embedding : nullptr);
  Matrix fused = detail::dense_chain(w.fused, concat_cols(num, emb), cfg.dense_activation,
                                     cfg.fused_dropout, training, dropout, dropout_site::fused,
                                     cache ? &cache->fused : nullptr);
  Matrix trunk = detail::dense_chain(w.trunk, concat_cols(summary, fused), cfg.dense_activation,
                                     cfg.trunk_dropout, training, dropout, dropout_site::trunk,
                                     cache ? &cache->trunk : nullptr);

  HeadOutputs out;
  if (cfg.has_mode()) {
    if (!w.mode_head) throw DimensionError("config has a mode head but weights do not");
    auto h = detail::head_forward(*w.mode_head, trunk);
    out.mode = h.probs;
    if (cache) cache->mode_head = std::move(h);
  }
  if (cfg.has_purpose()) {
    if (!w.purpose_head) throw DimensionError("config has a purpose head but weights do not");
    auto h = detail::head_forward(*w.purpose_head, trunk);
    out.purpose = h.probs;
    if (cache) cache->purpose_head = std::move(h);
  }
  return out;
}

// Gradients for every parameter, given gradients w.r.t. the head logits.
// A missing head gradient counts as zero.
inline NetworkWeights backward(const NetworkConfig& cfg, const NetworkWeights& w,
                               const ForwardCache& cache, const HeadGrads& upstream) {
  if (!cache.training) throw UsageError("backward needs a training-mode forward cache");
  NetworkWeights g = zeros_like(w);

  const HeadCache* any_head = cache.mode_head ? &*cache.mode_head : &*cache.purpose_head;
  Matrix d_trunk(any_head->x.rows(), any_head->x.cols());
  if (upstream.mode) {
    if (!cache.mode_head) throw UsageError("mode gradient given but the mode head did not run");
    detail::head_backward(*w.mode_head, *cache.mode_head, *upstream.mode, *g.mode_head, d_trunk);
  }
  if (upstream.purpose) {
    if (!cache.purpose_head) {
      throw UsageError("purpose gradient given but the purpose head did not run");
    }
    detail::head_backward(*w.purpose_head, *cache.purpose_head, *upstream.purpose,
                          *g.purpose_head, d_trunk);
  }

  Matrix d_trunk_in =
      detail::dense_chain_backward(w.trunk, cache.trunk, cfg.dense_activation, d_trunk, g.trunk);
  const std::size_t rec_w = cfg.recurrent_output_width();
  Matrix d_summary = slice_cols(d_trunk_in, 0, rec_w);
  Matrix d_fused = slice_cols(d_trunk_in, rec_w, d_trunk_in.cols() - rec_w);

  Matrix d_fused_in =
      detail::dense_chain_backward(w.fused, cache.fused, cfg.dense_activation, d_fused, g.fused);
  const std::size_t num_w = cfg.numeric_output_width();
  Matrix d_num = slice_cols(d_fused_in, 0, num_w);
  Matrix d_emb = slice_cols(d_fused_in, num_w, d_fused_in.cols() - num_w);
  detail::dense_chain_backward(w.numeric, cache.numeric, cfg.dense_activation, d_num, g.numeric);
  embed_backward(cfg.embedding, &cache.embedding, d_emb, g.embedding);

  if (!cache.summary_drop.empty()) d_summary = hadamard(d_summary, cache.summary_drop);

  std::visit(
      [&](const auto& layers) {
        using Layers = std::decay_t<decltype(layers)>;
        using Run = StackRun<typename Layers::value_type>;
        const auto* run = std::get_if<Run>(&cache.recurrent);
        if (!run) throw UsageError("forward cache does not match the recurrent weights");
        auto& grads = std::get<Layers>(g.recurrent);
        if (cfg.pooling == Pooling::last) {
          stack_backward(layers, *run, {}, d_summary, grads);
        } else {
          const std::size_t steps = run->top_outputs.size();
          std::vector<Matrix> d_out(steps, Matrix(d_summary.rows(), d_summary.cols()));
          for (std::size_t r = 0; r < cache.lengths.size(); ++r) {
            const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(1, cache.lengths[r]));
            const auto ds = d_summary.row(r);
            for (std::size_t t = 0; t < cache.lengths[r]; ++t) {
              auto row = d_out[t].row(r);
              for (std::size_t c = 0; c < row.size(); ++c) row[c] = ds[c] * inv;
            }
          }
          stack_backward(layers, *run, d_out, Matrix(), grads);
        }
      },
      w.recurrent);
  return g;
}

// Row-wise argmax; ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[out[r]]) out[r] = c;
  }
  return out;
}

struct Predictions {
  std::optional<std::vector<std::size_t>> mode;
  std::optional<std::vector<std::size_t>> purpose;
};

inline Predictions predict(const NetworkConfig& cfg, const NetworkWeights& w, const Batch& batch) {
  const HeadOutputs out = forward(cfg, w, batch, false);
  Predictions p;
  if (out.mode) p.mode = argmax_rows(*out.mode);
  if (out.purpose) p.purpose = argmax_rows(*out.purpose);
  return p;
}

// ---------------------------------------------------------------------------
// Serialization: magic, version, JSON metadata, named parameters as shape +
// little-endian doubles, CRC-32 of everything before it.

inline constexpr char kWeightsMagic[8] = {'T', 'R', 'I', 'P', 'N', 'E', 'T', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  buf.append(bytes, sizeof(T));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string file;

  template <class T>
  T get() {
    if (pos + sizeof(T) > buf.size()) throw IngestionError(file + ": truncated weights file");
    char bytes[sizeof(T)];
    std::memcpy(bytes, buf.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos + n > buf.size()) throw IngestionError(file + ": truncated weights file");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

// `metadata` may carry extra keys (e.g. the dataset schema); "network" is
// always written from cfg.
inline void save_weights(const std::filesystem::path& path, const NetworkConfig& cfg,
                         const NetworkWeights& w, Json metadata = Json::object()) {
  check_compatible(cfg, w);
  metadata["network"] = to_json(cfg);
  std::string buf(kWeightsMagic, sizeof kWeightsMagic);
  detail::put_le(buf, kWeightsVersion);
  const std::string meta = metadata.dump();
  detail::put_le(buf, static_cast<std::uint64_t>(meta.size()));
  buf += meta;
  auto params = params_of(const_cast<NetworkWeights&>(w));
  detail::put_le(buf, static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    detail::put_le(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    detail::put_le(buf, static_cast<std::uint64_t>(p.value->rows()));
    detail::put_le(buf, static_cast<std::uint64_t>(p.value->cols()));
    for (double v : p.value->values()) detail::put_le(buf, v);
  }
  detail::put_le(buf, detail::crc32_of(buf.data(), buf.size()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

struct LoadedWeights {
  NetworkConfig config;
  NetworkWeights weights;
  Json metadata;
};

inline LoadedWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open weights " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string file = path.string();
  if (buf.size() < sizeof kWeightsMagic + 4 + 4 ||
      std::memcmp(buf.data(), kWeightsMagic, sizeof kWeightsMagic) != 0) {
    throw IngestionError(file + ": not a tripnet weights file");
  }
  {
    detail::Reader tail{buf, buf.size() - 4, file};
    if (tail.get<std::uint32_t>() != detail::crc32_of(buf.data(), buf.size() - 4)) {
      throw IngestionError(file + ": checksum mismatch");
    }
  }
  detail::Reader r{buf, sizeof kWeightsMagic, file};
  const auto version = r.get<std::uint32_t>();
  if (version != kWeightsVersion) {
    throw IngestionError(file + ": unsupported weights version " + std::to_string(version));
  }
  LoadedWeights lw;
  lw.metadata = Json::parse(r.bytes(r.get<std::uint64_t>()));
  lw.config = network_config_from_json(lw.metadata.at("network"));
  lw.weights = shape_network(lw.config);
  auto params = params_of(lw.weights);
  const auto count = r.get<std::uint64_t>();
  if (count != params.size()) {
    throw DimensionError(file + ": holds " + std::to_string(count) + " parameters, config implies " +
                         std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (name != p.name || rows != p.value->rows() || cols != p.value->cols()) {
      throw DimensionError(file + ": parameter " + name + " (" + std::to_string(rows) + "x" +
                           std::to_string(cols) + ") does not match expected " + p.name + " " +
                           p.value->shape());
    }
    for (double& v : p.value->values()) v = r.get<double>();
  }
  if (r.pos != buf.size() - 4) throw IngestionError(file + ": trailing bytes in weights file");
  return lw;
}

}  // namespace tripnet
