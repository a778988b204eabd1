// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Recurrent cells (Elman RNN, LSTM, GRU) with step-level forward/backward,
// masked unrolling with backpropagation through time, a bidirectional
// wrapper and layer stacking.
//
// Layout: activations are batch-major, one row per sequence. W is
// (input x hidden), U is (hidden x hidden) and b is a (1 x hidden) row, so a
// gate pre-activation is x*W + h*U + b.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tripnet/error.hpp"
#include "tripnet/rng.hpp"
#include "tripnet/tensor.hpp"

namespace tripnet {

struct ParamRef {
  std::string name;
  Matrix* value;
};
using ParamList = std::vector<ParamRef>;

// ---------------------------------------------------------------------------
// Step mask

class StepMask {
 public:
  StepMask() = default;
  StepMask(std::size_t steps, std::size_t rows, bool valid = true)
      : steps_(steps), rows_(rows), valid_(steps * rows, valid ? 1 : 0) {}

  static StepMask from_lengths(const std::vector<std::size_t>& lengths, std::size_t steps) {
    StepMask m(steps, lengths.size(), false);
    for (std::size_t r = 0; r < lengths.size(); ++r) {
      if (lengths[r] > steps) {
        throw DimensionError("sequence length " + std::to_string(lengths[r]) + " exceeds " +
                             std::to_string(steps) + " steps");
      }
      for (std::size_t t = 0; t < lengths[r]; ++t) m.set(t, r, true);
    }
    return m;
  }

  std::size_t steps() const { return steps_; }
  std::size_t rows() const { return rows_; }
  bool operator()(std::size_t t, std::size_t r) const { return valid_[t * rows_ + r] != 0; }
  void set(std::size_t t, std::size_t r, bool v) { valid_[t * rows_ + r] = v ? 1 : 0; }

  bool any(std::size_t t) const {
    for (std::size_t r = 0; r < rows_; ++r)
      if ((*this)(t, r)) return true;
    return false;
  }
  bool all(std::size_t t) const {
    for (std::size_t r = 0; r < rows_; ++r)
      if (!(*this)(t, r)) return false;
    return true;
  }

  // Number of leading valid steps per row.
  std::vector<std::size_t> lengths() const {
    std::vector<std::size_t> out(rows_, 0);
    for (std::size_t r = 0; r < rows_; ++r) {
      std::size_t t = 0;
      while (t < steps_ && (*this)(t, r)) ++t;
      out[r] = t;
    }
    return out;
  }

  // Padding must be a contiguous tail on every row.
  bool is_contiguous() const {
    const auto len = lengths();
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t t = len[r]; t < steps_; ++t)
        if ((*this)(t, r)) return false;
    return true;
  }

  friend bool operator==(const StepMask&, const StepMask&) = default;

 private:
  std::size_t steps_ = 0;
  std::size_t rows_ = 0;
  std::vector<std::uint8_t> valid_;
};

// ---------------------------------------------------------------------------
// Parameter blocks

// One affine map over (x, h): x*W + h*U + b.
struct GateBlock {
  GateBlock() = default;
  GateBlock(std::size_t input, std::size_t hidden)
      : W(input, hidden), U(hidden, hidden), b(1, hidden) {}

  std::size_t input_size() const { return W.rows(); }
  std::size_t hidden_size() const { return U.cols(); }

  Matrix preactivation(const Matrix& x, const Matrix& h) const {
    Matrix pre(x.rows(), hidden_size());
    matmul_acc(x, W, pre);
    matmul_acc(h, U, pre);
    add_row_inplace(pre, b);
    return pre;
  }

  // Accumulates parameter gradients into grads and input gradients into
  // dx/dh. `t` holds this block with W and U transposed.
  void backward(const Matrix& x, const Matrix& h, const Matrix& dpre, const GateBlock& t,
                GateBlock& grads, Matrix& dx, Matrix& dh) const {
    matmul_tn_acc(x, dpre, grads.W);
    matmul_tn_acc(h, dpre, grads.U);
    add_col_sums(dpre, grads.b);
    matmul_acc(dpre, t.W, dx);
    matmul_acc(dpre, t.U, dh);
  }

  GateBlock transposed() const {
    GateBlock t;
    t.W = transpose(W);
    t.U = transpose(U);
    t.b = b;
    return t;
  }

  void collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + "W", &W});
    out.push_back({prefix + "U", &U});
    out.push_back({prefix + "b", &b});
  }

  Matrix W;
  Matrix U;
  Matrix b;
};

struct CellState {
  Matrix h;
  Matrix c;  // LSTM memory; empty for other cells
};

struct RnnCellWeights {
  RnnCellWeights() = default;
  RnnCellWeights(std::size_t input, std::size_t hidden, Activation act = Activation::tanh())
      : block(input, hidden), g(act) {}

  std::size_t input_size() const { return block.input_size(); }
  std::size_t hidden_size() const { return block.hidden_size(); }
  static constexpr bool has_memory = false;
  static constexpr const char* kind_name = "rnn";

  void collect(const std::string& prefix, ParamList& out) { block.collect(prefix, out); }
  RnnCellWeights transposed() const {
    RnnCellWeights t = *this;
    t.block = block.transposed();
    return t;
  }

  struct StepCache {
    Matrix x, h_prev, pre, h;
  };

  GateBlock block;
  Activation g = Activation::tanh();
};

struct LstmCellWeights {
  LstmCellWeights() = default;
  LstmCellWeights(std::size_t input, std::size_t hidden, Activation act = Activation::tanh())
      : forget(input, hidden),
        input_gate(input, hidden),
        output(input, hidden),
        candidate(input, hidden),
        g(act) {}

  std::size_t input_size() const { return forget.input_size(); }
  std::size_t hidden_size() const { return forget.hidden_size(); }
  static constexpr bool has_memory = true;
  static constexpr const char* kind_name = "lstm";

  void collect(const std::string& prefix, ParamList& out) {
    forget.collect(prefix + "forget.", out);
    input_gate.collect(prefix + "input.", out);
    output.collect(prefix + "output.", out);
    candidate.collect(prefix + "candidate.", out);
  }
  LstmCellWeights transposed() const {
    LstmCellWeights t = *this;
    t.forget = forget.transposed();
    t.input_gate = input_gate.transposed();
    t.output = output.transposed();
    t.candidate = candidate.transposed();
    return t;
  }

  struct StepCache {
    Matrix x, h_prev, c_prev;
    Matrix f, i, o;
    Matrix cand_pre, cand;
    Matrix c, gc;
  };

  GateBlock forget;
  GateBlock input_gate;
  GateBlock output;
  GateBlock candidate;
  Activation g = Activation::tanh();
};

struct GruCellWeights {
  GruCellWeights() = default;
  GruCellWeights(std::size_t input, std::size_t hidden, Activation act = Activation::tanh())
      : update(input, hidden), reset(input, hidden), candidate(input, hidden), g(act) {}

  std::size_t input_size() const { return update.input_size(); }
  std::size_t hidden_size() const { return update.hidden_size(); }
  static constexpr bool has_memory = false;
  static constexpr const char* kind_name = "gru";

  void collect(const std::string& prefix, ParamList& out) {
    update.collect(prefix + "update.", out);
    reset.collect(prefix + "reset.", out);
    candidate.collect(prefix + "candidate.", out);
  }
  GruCellWeights transposed() const {
    GruCellWeights t = *this;
    t.update = update.transposed();
    t.reset = reset.transposed();
    t.candidate = candidate.transposed();
    return t;
  }

  struct StepCache {
    Matrix x, h_prev;
    Matrix z, r, rh;
    Matrix cand_pre, cand;
  };

  GateBlock update;
  GateBlock reset;
  GateBlock candidate;
  Activation g = Activation::tanh();
};

template <class W>
ParamList params_of(W& w, const std::string& prefix = "") {
  ParamList out;
  w.collect(prefix, out);
  return out;
}

// Same shapes and activation, all parameters zero.
template <class W>
W zeros_like(const W& w) {
  W z = w;
  for (auto& p : params_of(z)) p.value->set_zero();
  return z;
}

// Glorot-uniform matrices, zero biases; optional LSTM forget bias of 1.
template <class W>
void initialize_cell(W& w, std::uint64_t seed, const std::string& prefix,
                     bool forget_bias_one = false) {
  for (auto& p : params_of(w, prefix)) {
    if (p.name.ends_with(".b") || p.name == "b") {
      const bool forget = forget_bias_one && p.name.ends_with("forget.b");
      p.value->fill(forget ? 1.0 : 0.0);
    } else {
      fill_glorot(*p.value, seed, p.name);
    }
  }
}

namespace detail {

inline void check_step_shapes(std::size_t input, std::size_t hidden, const Matrix& x,
                              const Matrix& h_prev) {
  if (x.cols() != input) {
    throw DimensionError("cell input " + x.shape() + " expects " + std::to_string(input) +
                         " columns");
  }
  if (h_prev.cols() != hidden || h_prev.rows() != x.rows()) {
    throw DimensionError("hidden state " + h_prev.shape() + " incompatible with input " +
                         x.shape() + " and hidden size " + std::to_string(hidden));
  }
}

inline Matrix sigmoid_of(const Matrix& pre) { return activate(Activation::sigmoid(), pre); }

// dpre = d * y * (1 - y) for a sigmoid output y
inline Matrix sigmoid_grad(const Matrix& d, const Matrix& y) {
  Matrix out(d.rows(), d.cols());
  for (std::size_t k = 0; k < d.size(); ++k) out[k] = d[k] * y[k] * (1.0 - y[k]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single steps. The cache pointer may be null (inference).

inline CellState step_forward(const RnnCellWeights& w, const Matrix& x, const CellState& prev,
                              RnnCellWeights::StepCache* cache) {
  detail::check_step_shapes(w.input_size(), w.hidden_size(), x, prev.h);
  Matrix pre = w.block.preactivation(x, prev.h);
  Matrix h = activate(w.g, pre);
  if (cache) *cache = {x, prev.h, pre, h};
  return {std::move(h), {}};
}

inline CellState step_forward(const LstmCellWeights& w, const Matrix& x, const CellState& prev,
                              LstmCellWeights::StepCache* cache) {
  detail::check_step_shapes(w.input_size(), w.hidden_size(), x, prev.h);
  if (!prev.c.same_shape(prev.h)) {
    throw DimensionError("LSTM memory " + prev.c.shape() + " vs hidden " + prev.h.shape());
  }
  Matrix f = detail::sigmoid_of(w.forget.preactivation(x, prev.h));
  Matrix i = detail::sigmoid_of(w.input_gate.preactivation(x, prev.h));
  Matrix o = detail::sigmoid_of(w.output.preactivation(x, prev.h));
  Matrix cand_pre = w.candidate.preactivation(x, prev.h);
  Matrix cand = activate(w.g, cand_pre);
  Matrix c(x.rows(), w.hidden_size());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = f[k] * prev.c[k] + i[k] * cand[k];
  Matrix gc = activate(w.g, c);
  Matrix h = hadamard(o, gc);
  if (cache) {
    *cache = {x, prev.h, prev.c, std::move(f), std::move(i), std::move(o),
              std::move(cand_pre), std::move(cand), c, gc};
  }
  return {std::move(h), std::move(c)};
}

inline CellState step_forward(const GruCellWeights& w, const Matrix& x, const CellState& prev,
                              GruCellWeights::StepCache* cache) {
  detail::check_step_shapes(w.input_size(), w.hidden_size(), x, prev.h);
  Matrix z = detail::sigmoid_of(w.update.preactivation(x, prev.h));
  Matrix r = detail::sigmoid_of(w.reset.preactivation(x, prev.h));
  Matrix rh = hadamard(r, prev.h);
  Matrix cand_pre = w.candidate.preactivation(x, rh);
  Matrix cand = activate(w.g, cand_pre);
  Matrix h(x.rows(), w.hidden_size());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = (1.0 - z[k]) * prev.h[k] + z[k] * cand[k];
  if (cache) {
    *cache = {x, prev.h, std::move(z), std::move(r), std::move(rh), std::move(cand_pre),
              std::move(cand)};
  }
  return {std::move(h), {}};
}

// Step backward: given dnext (gradient w.r.t. the new state), accumulate
// parameter gradients and write dx and dprev. `t` is w.transposed().

inline void step_backward(const RnnCellWeights& w, const RnnCellWeights& t,
                          const RnnCellWeights::StepCache& c, const CellState& dnext,
                          RnnCellWeights& grads, Matrix& dx, CellState& dprev) {
  Matrix dpre = activate_backward(w.g, c.pre, c.h, dnext.h);
  dx = Matrix(c.x.rows(), c.x.cols());
  dprev.h = Matrix(c.h_prev.rows(), c.h_prev.cols());
  w.block.backward(c.x, c.h_prev, dpre, t.block, grads.block, dx, dprev.h);
}

inline void step_backward(const LstmCellWeights& w, const LstmCellWeights& t,
                          const LstmCellWeights::StepCache& c, const CellState& dnext,
                          LstmCellWeights& grads, Matrix& dx, CellState& dprev) {
  const std::size_t n = c.c.size();
  Matrix d_o(c.o.rows(), c.o.cols());
  Matrix dgc(c.o.rows(), c.o.cols());
  for (std::size_t k = 0; k < n; ++k) {
    d_o[k] = dnext.h[k] * c.gc[k];
    dgc[k] = dnext.h[k] * c.o[k];
  }
  Matrix dc = activate_backward(w.g, c.c, c.gc, dgc);
  if (!dnext.c.empty()) dc += dnext.c;

  Matrix df(dc.rows(), dc.cols()), di(dc.rows(), dc.cols()), dcand(dc.rows(), dc.cols());
  dprev.c = Matrix(dc.rows(), dc.cols());
  for (std::size_t k = 0; k < n; ++k) {
    df[k] = dc[k] * c.c_prev[k];
    di[k] = dc[k] * c.cand[k];
    dcand[k] = dc[k] * c.i[k];
    dprev.c[k] = dc[k] * c.f[k];
  }

  dx = Matrix(c.x.rows(), c.x.cols());
  dprev.h = Matrix(c.h_prev.rows(), c.h_prev.cols());
  w.forget.backward(c.x, c.h_prev, detail::sigmoid_grad(df, c.f), t.forget, grads.forget, dx,
                    dprev.h);
  w.input_gate.backward(c.x, c.h_prev, detail::sigmoid_grad(di, c.i), t.input_gate,
                        grads.input_gate, dx, dprev.h);
  w.output.backward(c.x, c.h_prev, detail::sigmoid_grad(d_o, c.o), t.output, grads.output, dx,
                    dprev.h);
  w.candidate.backward(c.x, c.h_prev, activate_backward(w.g, c.cand_pre, c.cand, dcand),
                       t.candidate, grads.candidate, dx, dprev.h);
}

inline void step_backward(const GruCellWeights& w, const GruCellWeights& t,
                          const GruCellWeights::StepCache& c, const CellState& dnext,
                          GruCellWeights& grads, Matrix& dx, CellState& dprev) {
  const std::size_t n = c.z.size();
  const Matrix& dh = dnext.h;
  Matrix dz(c.z.rows(), c.z.cols()), dcand(c.z.rows(), c.z.cols());
  dprev.h = Matrix(c.h_prev.rows(), c.h_prev.cols());
  for (std::size_t k = 0; k < n; ++k) {
    dz[k] = dh[k] * (c.cand[k] - c.h_prev[k]);
    dcand[k] = dh[k] * c.z[k];
    dprev.h[k] = dh[k] * (1.0 - c.z[k]);
  }
  dx = Matrix(c.x.rows(), c.x.cols());

  Matrix drh(c.rh.rows(), c.rh.cols());
  w.candidate.backward(c.x, c.rh, activate_backward(w.g, c.cand_pre, c.cand, dcand),
                       t.candidate, grads.candidate, dx, drh);
  Matrix dr(drh.rows(), drh.cols());
  for (std::size_t k = 0; k < n; ++k) {
    dr[k] = drh[k] * c.h_prev[k];
    dprev.h[k] += drh[k] * c.r[k];
  }
  w.update.backward(c.x, c.h_prev, detail::sigmoid_grad(dz, c.z), t.update, grads.update, dx,
                    dprev.h);
  w.reset.backward(c.x, c.h_prev, detail::sigmoid_grad(dr, c.r), t.reset, grads.reset, dx,
                   dprev.h);
}

// Public single-step forms.

inline Matrix rnn_step(const RnnCellWeights& w, const Matrix& x_t, const Matrix& h_prev) {
  return step_forward(w, x_t, CellState{h_prev, {}}, nullptr).h;
}

inline std::pair<Matrix, Matrix> lstm_step(const LstmCellWeights& w, const Matrix& x_t,
                                           const Matrix& h_prev, const Matrix& c_prev) {
  CellState s = step_forward(w, x_t, CellState{h_prev, c_prev}, nullptr);
  return {std::move(s.h), std::move(s.c)};
}

inline Matrix gru_step(const GruCellWeights& w, const Matrix& x_t, const Matrix& h_prev) {
  return step_forward(w, x_t, CellState{h_prev, {}}, nullptr).h;
}

// ---------------------------------------------------------------------------
// Unrolling

template <class W>
CellState zero_state(const W& w, std::size_t rows) {
  CellState s{Matrix(rows, w.hidden_size()), {}};
  if constexpr (W::has_memory) s.c = Matrix(rows, w.hidden_size());
  return s;
}

template <class W>
struct SequenceState {
  // states[0] is the initial state, states[t] the state after step t.
  std::vector<CellState> states;
  // Per-step caches; present only when unrolled in training mode.
  std::vector<std::optional<typename W::StepCache>> cache;
  StepMask mask;
  bool training = false;

  std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
  const Matrix& h(std::size_t t) const { return states.at(t).h; }
  const CellState& final_state() const { return states.back(); }

  // Per-step outputs h_1..h_T.
  std::vector<Matrix> outputs() const {
    std::vector<Matrix> out;
    out.reserve(steps());
    for (std::size_t t = 1; t < states.size(); ++t) out.push_back(states[t].h);
    return out;
  }
};

namespace detail {

// Rows of `fresh` whose mask is off at step t are replaced by `prev`.
inline void keep_masked_rows(Matrix& fresh, const Matrix& prev, const StepMask& mask,
                             std::size_t t) {
  if (fresh.empty()) return;
  for (std::size_t r = 0; r < fresh.rows(); ++r) {
    if (mask(t, r)) continue;
    const auto pr = prev.row(r);
    std::copy(pr.begin(), pr.end(), fresh.row(r).begin());
  }
}

inline void zero_masked_rows(Matrix& m, const StepMask& mask, std::size_t t) {
  if (m.empty()) return;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (mask(t, r)) continue;
    auto row = m.row(r);
    std::fill(row.begin(), row.end(), 0.0);
  }
}

}  // namespace detail

// Runs the cell over inputs[0..T). Masked rows carry their state through
// unchanged. Steps with no valid row skip the cell entirely.
template <class W>
SequenceState<W> unroll(const W& w, const std::vector<Matrix>& inputs, const StepMask& mask,
                        std::optional<CellState> initial = std::nullopt, bool training = true) {
  if (inputs.empty()) throw ContractError("unroll requires at least one step");
  if (mask.steps() != inputs.size()) {
    throw DimensionError("mask has " + std::to_string(mask.steps()) + " steps, inputs have " +
                         std::to_string(inputs.size()));
  }
  const std::size_t rows = inputs.front().rows();
  if (mask.rows() != rows) {
    throw DimensionError("mask has " + std::to_string(mask.rows()) + " rows, batch has " +
                         std::to_string(rows));
  }
  SequenceState<W> seq;
  seq.mask = mask;
  seq.training = training;
  seq.states.reserve(inputs.size() + 1);
  seq.states.push_back(initial ? std::move(*initial) : zero_state(w, rows));
  if (seq.states[0].h.rows() != rows || seq.states[0].h.cols() != w.hidden_size()) {
    throw DimensionError("initial state " + seq.states[0].h.shape() + " does not match batch");
  }
  if (training) seq.cache.resize(inputs.size());

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const CellState& prev = seq.states.back();
    if (!mask.any(t)) {
      seq.states.push_back(prev);
      continue;
    }
    typename W::StepCache* cache = nullptr;
    if (training) {
      seq.cache[t].emplace();
      cache = &*seq.cache[t];
    }
    CellState next = step_forward(w, inputs[t], prev, cache);
    if (!mask.all(t)) {
      detail::keep_masked_rows(next.h, prev.h, mask, t);
      detail::keep_masked_rows(next.c, prev.c, mask, t);
    }
    seq.states.push_back(std::move(next));
  }
  return seq;
}

template <class W>
struct UnrollGrads {
  W weights;
  std::vector<Matrix> inputs;
  CellState initial;
};

// Backpropagation through time. d_outputs[t] is the gradient w.r.t. h_{t+1}
// (an empty matrix means zero); d_final adds to the last state.
template <class W>
UnrollGrads<W> unroll_backward(const W& w, const SequenceState<W>& seq,
                               const std::vector<Matrix>& d_outputs,
                               const CellState& d_final = {}) {
  if (!seq.training) throw UsageError("unroll_backward needs a training-mode sequence state");
  const std::size_t steps = seq.steps();
  if (!d_outputs.empty() && d_outputs.size() != steps) {
    throw DimensionError("upstream has " + std::to_string(d_outputs.size()) + " steps, state has " +
                         std::to_string(steps));
  }
  const std::size_t rows = seq.states[0].h.rows();
  const W wt = w.transposed();

  UnrollGrads<W> g{zeros_like(w), std::vector<Matrix>(steps), {}};
  CellState d = zero_state(w, rows);
  if (!d_final.h.empty()) d.h += d_final.h;
  if constexpr (W::has_memory) {
    if (!d_final.c.empty()) d.c += d_final.c;
  }

  for (std::size_t t = steps; t-- > 0;) {
    if (!d_outputs.empty() && !d_outputs[t].empty()) d.h += d_outputs[t];
    const auto& cache = seq.cache[t];
    if (!cache) {
      g.inputs[t] = Matrix(rows, w.input_size());
      continue;
    }
    CellState dnext = d;
    const bool partial = !seq.mask.all(t);
    if (partial) {
      detail::zero_masked_rows(dnext.h, seq.mask, t);
      detail::zero_masked_rows(dnext.c, seq.mask, t);
    }
    CellState dprev;
    step_backward(w, wt, *cache, dnext, g.weights, g.inputs[t], dprev);
    if (partial) {
      detail::keep_masked_rows(dprev.h, d.h, seq.mask, t);
      detail::keep_masked_rows(dprev.c, d.c, seq.mask, t);
      detail::zero_masked_rows(g.inputs[t], seq.mask, t);
    }
    if constexpr (!W::has_memory) dprev.c = {};
    d = std::move(dprev);
  }
  g.initial = std::move(d);
  return g;
}

// ---------------------------------------------------------------------------
// Bidirectional wrapper

namespace detail {

// Reverses the valid prefix of every row; padding stays at the tail.
inline std::vector<Matrix> reverse_valid(const std::vector<Matrix>& seq,
                                         const std::vector<std::size_t>& lengths) {
  std::vector<Matrix> out;
  out.reserve(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) out.emplace_back(seq[t].rows(), seq[t].cols());
  for (std::size_t r = 0; r < lengths.size(); ++r) {
    for (std::size_t t = 0; t < lengths[r]; ++t) {
      const auto src = seq[lengths[r] - 1 - t].row(r);
      std::copy(src.begin(), src.end(), out[t].row(r).begin());
    }
  }
  return out;
}

}  // namespace detail

template <class W>
struct BidirectionalState {
  SequenceState<W> forward;
  SequenceState<W> backward;  // unrolled over the reversed valid prefix
  std::vector<std::size_t> lengths;

  std::size_t width() const { return 2 * forward.states[0].h.cols(); }

  // outputs[t] = [forward h at t || backward h aligned to original position t].
  // Padded positions hold [forward carry || backward final state].
  std::vector<Matrix> outputs() const {
    const std::size_t steps = forward.steps();
    const std::size_t rows = lengths.size();
    const std::size_t hidden = forward.states[0].h.cols();
    std::vector<Matrix> out;
    out.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      Matrix o(rows, 2 * hidden);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto fr = forward.h(t + 1).row(r);
        const std::size_t bt = t < lengths[r] ? lengths[r] - t : backward.steps();
        const auto br = backward.h(bt).row(r);
        auto orow = o.row(r);
        std::copy(fr.begin(), fr.end(), orow.begin());
        std::copy(br.begin(), br.end(), orow.begin() + static_cast<std::ptrdiff_t>(hidden));
      }
      out.push_back(std::move(o));
    }
    return out;
  }

  // [forward final || backward final]
  Matrix final_output() const {
    return concat_cols(forward.final_state().h, backward.final_state().h);
  }
};

template <class W>
BidirectionalState<W> bidirectional(const W& fwd, const W& bwd, const std::vector<Matrix>& inputs,
                                    const StepMask& mask, bool training = true) {
  if (fwd.hidden_size() != bwd.hidden_size()) {
    throw DimensionError("bidirectional hidden sizes differ: " +
                         std::to_string(fwd.hidden_size()) + " vs " +
                         std::to_string(bwd.hidden_size()));
  }
  if (!mask.is_contiguous()) throw ContractError("bidirectional needs end-padded masks");
  BidirectionalState<W> s;
  s.lengths = mask.lengths();
  s.forward = unroll(fwd, inputs, mask, std::nullopt, training);
  s.backward = unroll(bwd, detail::reverse_valid(inputs, s.lengths), mask, std::nullopt, training);
  return s;
}

template <class W>
struct BidirectionalGrads {
  W forward;
  W backward;
  std::vector<Matrix> inputs;
};

template <class W>
BidirectionalGrads<W> bidirectional_backward(const W& fwd, const W& bwd,
                                             const BidirectionalState<W>& s,
                                             const std::vector<Matrix>& d_outputs,
                                             const Matrix& d_final = {}) {
  const std::size_t steps = s.forward.steps();
  const std::size_t rows = s.lengths.size();
  const std::size_t hidden = fwd.hidden_size();
  std::vector<Matrix> d_fwd(steps), d_bwd(steps);
  if (!d_outputs.empty()) {
    if (d_outputs.size() != steps) throw DimensionError("bidirectional upstream length mismatch");
    for (std::size_t t = 0; t < steps; ++t) {
      d_fwd[t] = Matrix(rows, hidden);
      d_bwd[t] = Matrix(rows, hidden);
    }
    for (std::size_t t = 0; t < steps; ++t) {
      if (d_outputs[t].empty()) continue;
      for (std::size_t r = 0; r < rows; ++r) {
        const auto dr = d_outputs[t].row(r);
        std::copy(dr.begin(), dr.begin() + static_cast<std::ptrdiff_t>(hidden),
                  d_fwd[t].row(r).begin());
        // Padded positions are never read downstream; their gradient is dropped.
        if (t >= s.lengths[r]) continue;
        auto target = d_bwd[s.lengths[r] - 1 - t].row(r);
        for (std::size_t c = 0; c < hidden; ++c) target[c] += dr[hidden + c];
      }
    }
  }
  CellState df, db;
  if (!d_final.empty()) {
    df.h = slice_cols(d_final, 0, hidden);
    db.h = slice_cols(d_final, hidden, hidden);
  }
  auto gf = unroll_backward(fwd, s.forward, d_fwd, df);
  auto gb = unroll_backward(bwd, s.backward, d_bwd, db);
  BidirectionalGrads<W> g{std::move(gf.weights), std::move(gb.weights), std::move(gf.inputs)};
  const auto back_inputs = detail::reverse_valid(gb.inputs, s.lengths);
  for (std::size_t t = 0; t < steps; ++t) g.inputs[t] += back_inputs[t];
  return g;
}

// ---------------------------------------------------------------------------
// Layers and stacking

template <class W>
struct Unidirectional {
  using Weights = W;
  using Run = SequenceState<W>;
  static constexpr bool is_bidirectional = false;

  std::size_t input_size() const { return cell.input_size(); }
  std::size_t output_size() const { return cell.hidden_size(); }
  void collect(const std::string& prefix, ParamList& out) { cell.collect(prefix, out); }

  W cell;
};

template <class W>
struct Bidirectional {
  using Weights = W;
  using Run = BidirectionalState<W>;
  static constexpr bool is_bidirectional = true;

  std::size_t input_size() const { return forward.input_size(); }
  std::size_t output_size() const { return 2 * forward.hidden_size(); }
  void collect(const std::string& prefix, ParamList& out) {
    forward.collect(prefix + "fwd.", out);
    backward.collect(prefix + "bwd.", out);
  }

  W forward;
  W backward;
};

template <class W>
SequenceState<W> layer_forward(const Unidirectional<W>& l, const std::vector<Matrix>& in,
                               const StepMask& mask, bool training) {
  return unroll(l.cell, in, mask, std::nullopt, training);
}
template <class W>
BidirectionalState<W> layer_forward(const Bidirectional<W>& l, const std::vector<Matrix>& in,
                                    const StepMask& mask, bool training) {
  return bidirectional(l.forward, l.backward, in, mask, training);
}

template <class W>
std::vector<Matrix> layer_outputs(const SequenceState<W>& s) {
  return s.outputs();
}
template <class W>
std::vector<Matrix> layer_outputs(const BidirectionalState<W>& s) {
  return s.outputs();
}
template <class W>
Matrix layer_final(const SequenceState<W>& s) {
  return s.final_state().h;
}
template <class W>
Matrix layer_final(const BidirectionalState<W>& s) {
  return s.final_output();
}

// Returns input gradients; parameter gradients are added into `grads`.
template <class W>
std::vector<Matrix> layer_backward(const Unidirectional<W>& l, const SequenceState<W>& s,
                                   const std::vector<Matrix>& d_out, const Matrix& d_final,
                                   Unidirectional<W>& grads) {
  auto g = unroll_backward(l.cell, s, d_out, CellState{d_final, {}});
  auto dst = params_of(grads.cell);
  auto src = params_of(g.weights);
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].value += *src[k].value;
  return std::move(g.inputs);
}
template <class W>
std::vector<Matrix> layer_backward(const Bidirectional<W>& l, const BidirectionalState<W>& s,
                                   const std::vector<Matrix>& d_out, const Matrix& d_final,
                                   Bidirectional<W>& grads) {
  auto g = bidirectional_backward(l.forward, l.backward, s, d_out, d_final);
  auto add = [](W& dst, W& src) {
    auto d = params_of(dst);
    auto s2 = params_of(src);
    for (std::size_t k = 0; k < d.size(); ++k) *d[k].value += *s2[k].value;
  };
  add(grads.forward, g.forward);
  add(grads.backward, g.backward);
  return std::move(g.inputs);
}

template <class Layer>
struct StackRun {
  std::vector<typename Layer::Run> runs;
  // between[i][t] is the dropout mask applied to layer i's output at step t
  // before it feeds layer i+1 (empty when dropout is off).
  std::vector<std::vector<Matrix>> between;
  std::vector<Matrix> top_outputs;
  Matrix top_final;
  bool training = false;
};

// Feeds each layer's per-step outputs to the next, with inverted dropout
// between layers while training. Dropout after the top layer is the
// caller's business.
template <class Layer>
StackRun<Layer> stack(const std::vector<Layer>& layers, const std::vector<Matrix>& inputs,
                      const StepMask& mask, double dropout, bool training,
                      const DropoutSource& dropout_source = {}, std::uint64_t site = 0) {
  if (layers.empty()) throw ContractError("stack needs at least one layer");
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError("dropout must lie in [0, 1)");
  if (!inputs.empty() && inputs.front().cols() != layers.front().input_size()) {
    throw DimensionError("stack input width " + std::to_string(inputs.front().cols()) +
                         " but layer 0 expects " + std::to_string(layers.front().input_size()));
  }
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].input_size() != layers[i - 1].output_size()) {
      throw DimensionError("layer " + std::to_string(i) + " expects width " +
                           std::to_string(layers[i].input_size()) + " but layer " +
                           std::to_string(i - 1) + " emits " +
                           std::to_string(layers[i - 1].output_size()));
    }
  }
  StackRun<Layer> run;
  run.training = training;
  std::vector<Matrix> current = inputs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    run.runs.push_back(layer_forward(layers[i], current, mask, training));
    current = layer_outputs(run.runs.back());
    if (i + 1 == layers.size()) break;
    std::vector<Matrix> masks;
    if (training && dropout > 0.0) {
      for (std::size_t t = 0; t < current.size(); ++t) {
        masks.push_back(dropout_source.mask(dropout, hash_combine(site, i), t, current[t].rows(),
                                            current[t].cols()));
        current[t] = hadamard(current[t], masks.back());
      }
    }
    run.between.push_back(std::move(masks));
  }
  run.top_final = layer_final(run.runs.back());
  run.top_outputs = std::move(current);
  return run;
}

// Gradients flow from the top layer's per-step outputs and final output.
template <class Layer>
std::vector<Matrix> stack_backward(const std::vector<Layer>& layers, const StackRun<Layer>& run,
                                   const std::vector<Matrix>& d_top_outputs,
                                   const Matrix& d_top_final, std::vector<Layer>& grads) {
  if (!run.training) throw UsageError("stack_backward needs a training-mode run");
  std::vector<Matrix> d_out = d_top_outputs;
  Matrix d_final = d_top_final;
  for (std::size_t i = layers.size(); i-- > 0;) {
    std::vector<Matrix> d_in = layer_backward(layers[i], run.runs[i], d_out, d_final, grads[i]);
    d_final = Matrix();
    if (i == 0) return d_in;
    const auto& masks = run.between[i - 1];
    if (!masks.empty()) {
      for (std::size_t t = 0; t < d_in.size(); ++t) d_in[t] = hadamard(d_in[t], masks[t]);
    }
    d_out = std::move(d_in);
  }
  return {};
}

}  // namespace tripnet
