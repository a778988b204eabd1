// Copyright 2026 The tripnet Authors. Apache 2.0 License.

#include <gtest/gtest.h>

#include <cmath>

#include "testing.hpp"
#include "tripnet/cells.hpp"

using namespace tripnet;
namespace tu = tripnet::test_util;
using tu::Gen;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix scalar(double v) { return Matrix(1, 1, v); }

template <class W>
void fill_params(W& w, Gen& g, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& p : params_of(w))
    for (double& v : p.value->values()) v = u(g);
}

template <class W>
void fill_params_with(W& w, double v) {
  for (auto& p : params_of(w)) p.value->fill(v);
}

std::vector<Matrix> random_inputs(Gen& g, std::size_t steps, std::size_t rows, std::size_t cols) {
  std::vector<Matrix> xs;
  for (std::size_t t = 0; t < steps; ++t) xs.push_back(tu::random_matrix(g, rows, cols, -1.0, 1.0));
  return xs;
}

// ---------------------------------------------------------------------------
// Single steps

TEST(RnnStep, ZeroWeightsGiveZero) {
  RnnCellWeights w(3, 2);
  EXPECT_EQ(rnn_step(w, Matrix(1, 3, 0.7), Matrix(1, 2, -0.3)), Matrix(1, 2));
}

TEST(RnnStep, IdentityRecurrencePassesStateThrough) {
  RnnCellWeights w(3, 2, Activation::identity());
  w.block.U = Matrix::identity(2);
  const Matrix h = Matrix::from_rows({{0.25, -1.5}});
  EXPECT_EQ(rnn_step(w, Matrix(1, 3, 0.9), h), h);
}

TEST(RnnStep, ScalarInstance) {
  RnnCellWeights w(1, 1);
  fill_params_with(w, 1.0);
  w.block.b.fill(0.0);
  const double h = rnn_step(w, scalar(0.5), scalar(0.5))(0, 0);
  EXPECT_NEAR(h, std::tanh(1.0), 1e-15);
  EXPECT_NEAR(h, 0.761594, 1e-6);
}

TEST(RnnStep, ShapeMismatchIsADimensionError) {
  RnnCellWeights w(3, 2);
  EXPECT_THROW(rnn_step(w, Matrix(1, 4), Matrix(1, 2)), DimensionError);
  EXPECT_THROW(rnn_step(w, Matrix(1, 3), Matrix(1, 3)), DimensionError);
  EXPECT_THROW(rnn_step(w, Matrix(2, 3), Matrix(1, 2)), DimensionError);
}

TEST(LstmStep, ZeroWeightsHalveMemory) {
  LstmCellWeights w(2, 3);
  const Matrix c = Matrix::from_rows({{1.0, -2.0, 0.5}});
  const auto [h, c_next] = lstm_step(w, Matrix(1, 2, 0.3), Matrix(1, 3, 0.1), c);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_DOUBLE_EQ(c_next(0, k), 0.5 * c(0, k));
    EXPECT_DOUBLE_EQ(h(0, k), 0.5 * std::tanh(0.5 * c(0, k)));
  }
}

TEST(LstmStep, SaturatedForgetGateKeepsMemory) {
  LstmCellWeights w(2, 2);
  w.forget.b.fill(50.0);
  w.input_gate.b.fill(-50.0);
  const Matrix c = Matrix::from_rows({{0.8, -0.4}});
  const auto [h, c_next] = lstm_step(w, Matrix(1, 2, 1.0), Matrix(1, 2, 0.5), c);
  EXPECT_LT(tu::max_abs_diff(c_next, c), 1e-12);
}

TEST(LstmStep, ScalarInstance) {
  LstmCellWeights w(1, 1);
  fill_params_with(w, 1.0);
  for (GateBlock* b : {&w.forget, &w.input_gate, &w.output, &w.candidate}) b->b.fill(0.0);
  const auto [h, c] = lstm_step(w, scalar(1.0), scalar(0.0), scalar(0.0));
  const double gate = sig(1.0);
  const double c_ref = gate * 0.0 + gate * std::tanh(1.0);
  const double h_ref = gate * std::tanh(c_ref);
  EXPECT_NEAR(c(0, 0), c_ref, 1e-15);
  EXPECT_NEAR(h(0, 0), h_ref, 1e-15);
  // Published hand values carry rounding slips in the fifth decimal.
  EXPECT_NEAR(c(0, 0), 0.556791, 5e-4);
  EXPECT_NEAR(h(0, 0), 0.369232, 5e-4);
}

TEST(LstmStep, GatesStayInOpenUnitInterval) {
  Gen g(11);
  LstmCellWeights w(3, 4);
  fill_params(w, g, -2.0, 2.0);
  LstmCellWeights::StepCache cache;
  step_forward(w, tu::random_matrix(g, 5, 3), CellState{tu::random_matrix(g, 5, 4), tu::random_matrix(g, 5, 4)},
               &cache);
  for (const Matrix* m : {&cache.f, &cache.i, &cache.o})
    for (double v : m->values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
}

TEST(GruStep, ZeroWeightsHalveState) {
  GruCellWeights w(2, 3);
  const Matrix h = Matrix::from_rows({{1.0, -2.0, 0.5}});
  const Matrix next = gru_step(w, Matrix(1, 2, 0.4), h);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(next(0, k), 0.5 * h(0, k));
}

TEST(GruStep, ClosedUpdateGateKeepsState) {
  Gen g(12);
  GruCellWeights w(2, 3);
  fill_params(w, g);
  w.update.b.fill(-50.0);
  const Matrix h = Matrix::from_rows({{0.3, -0.2, 0.9}});
  EXPECT_LT(tu::max_abs_diff(gru_step(w, Matrix(1, 2, 5.0), h), h), 1e-12);
}

TEST(GruStep, ScalarInstance) {
  GruCellWeights w(1, 1);
  fill_params_with(w, 1.0);
  for (GateBlock* b : {&w.update, &w.reset, &w.candidate}) b->b.fill(0.0);
  const double h = gru_step(w, scalar(1.0), scalar(1.0))(0, 0);
  const double z = sig(2.0);
  const double cand = std::tanh(1.0 + z * 1.0);
  const double ref = (1.0 - z) * 1.0 + z * cand;
  EXPECT_NEAR(h, ref, 1e-15);
  EXPECT_NEAR(z, 0.880797, 1e-6);
  EXPECT_NEAR(cand, 0.954525, 5e-4);
  EXPECT_NEAR(h, 0.959945, 5e-4);
}

TEST(GruStep, StateIsConvexCombination) {
  Gen g(13);
  for (int trial = 0; trial < 20; ++trial) {
    GruCellWeights w(3, 5);
    fill_params(w, g, -2.0, 2.0);
    GruCellWeights::StepCache cache;
    const Matrix h_prev = tu::random_matrix(g, 4, 5, -1.0, 1.0);
    const CellState next = step_forward(w, tu::random_matrix(g, 4, 3), CellState{h_prev, {}}, &cache);
    for (std::size_t k = 0; k < h_prev.size(); ++k) {
      const double lo = std::min(h_prev[k], cache.cand[k]);
      const double hi = std::max(h_prev[k], cache.cand[k]);
      EXPECT_GE(next.h[k], lo - 1e-15);
      EXPECT_LE(next.h[k], hi + 1e-15);
    }
  }
}

// ---------------------------------------------------------------------------
// Unrolling

template <class W>
class UnrollTest : public ::testing::Test {};
using CellTypes = ::testing::Types<RnnCellWeights, LstmCellWeights, GruCellWeights>;
TYPED_TEST_SUITE(UnrollTest, CellTypes);

TYPED_TEST(UnrollTest, SingleStepMatchesStep) {
  Gen g(21);
  TypeParam w(3, 4);
  fill_params(w, g);
  const auto xs = random_inputs(g, 1, 2, 3);
  const auto seq = unroll(w, xs, StepMask(1, 2));
  const CellState direct = step_forward(w, xs[0], zero_state(w, 2), nullptr);
  EXPECT_EQ(seq.final_state().h, direct.h);
}

TYPED_TEST(UnrollTest, AllMaskedKeepsInitialState) {
  Gen g(22);
  TypeParam w(3, 4);
  fill_params(w, g);
  CellState init = zero_state(w, 2);
  init.h = tu::random_matrix(g, 2, 4);
  if (!init.c.empty()) init.c = tu::random_matrix(g, 2, 4);
  const auto seq = unroll(w, random_inputs(g, 5, 2, 3), StepMask(5, 2, false), init);
  EXPECT_EQ(seq.final_state().h, init.h);
  EXPECT_EQ(seq.final_state().c, init.c);
}

TYPED_TEST(UnrollTest, TrailingMaskedStepsChangeNothing) {
  Gen g(23);
  for (int trial = 0; trial < 10; ++trial) {
    TypeParam w(2, 3);
    fill_params(w, g);
    const std::size_t steps = tu::random_size(g, 1, 6);
    const std::size_t extra = tu::random_size(g, 1, 4);
    auto xs = random_inputs(g, steps, 3, 2);
    const auto short_run = unroll(w, xs, StepMask(steps, 3));
    const auto padded_inputs = [&] {
      auto p = xs;
      for (std::size_t k = 0; k < extra; ++k) p.push_back(tu::random_matrix(g, 3, 2));
      return p;
    }();
    const auto long_run =
        unroll(w, padded_inputs, StepMask::from_lengths({steps, steps, steps}, steps + extra));
    EXPECT_EQ(long_run.final_state().h, short_run.final_state().h);

    // Gradients too: upstream on the final state only.
    const Matrix q = tu::random_matrix(g, 3, 3);
    const auto gs = unroll_backward(w, short_run, {}, CellState{q, {}});
    const auto gl = unroll_backward(w, long_run, {}, CellState{q, {}});
    auto ps = params_of(const_cast<TypeParam&>(gs.weights));
    auto pl = params_of(const_cast<TypeParam&>(gl.weights));
    for (std::size_t k = 0; k < ps.size(); ++k) EXPECT_EQ(*ps[k].value, *pl[k].value) << ps[k].name;
    for (std::size_t k = steps; k < steps + extra; ++k) EXPECT_EQ(gl.inputs[k], Matrix(3, 2));
  }
}

TYPED_TEST(UnrollTest, MaskLengthMismatchIsADimensionError) {
  TypeParam w(2, 3);
  EXPECT_THROW(unroll(w, std::vector<Matrix>(4, Matrix(1, 2)), StepMask(3, 1)), DimensionError);
}

TYPED_TEST(UnrollTest, InferenceStateRefusesBackward) {
  TypeParam w(2, 3);
  const auto seq = unroll(w, std::vector<Matrix>(2, Matrix(1, 2)), StepMask(2, 1), std::nullopt, false);
  EXPECT_THROW(unroll_backward(w, seq, {}), UsageError);
}

TYPED_TEST(UnrollTest, ZeroUpstreamGivesZeroGradients) {
  Gen g(24);
  TypeParam w(2, 3);
  fill_params(w, g);
  const auto seq = unroll(w, random_inputs(g, 4, 2, 2), StepMask(4, 2));
  auto grads = unroll_backward(w, seq, {});
  for (auto& p : params_of(grads.weights)) EXPECT_EQ(*p.value, Matrix(p.value->rows(), p.value->cols()));
}

// Loss = sum_t <P_t, h_t> + <Q, h_T> (+ <R, c_T>) over a partly masked batch.
template <class W>
double unroll_fd_error(Gen& g, std::size_t steps, std::size_t hidden) {
  const std::size_t rows = 3, input = 3;
  W w(input, hidden);
  fill_params(w, g);
  auto xs = random_inputs(g, steps, rows, input);
  const StepMask mask = StepMask::from_lengths({steps, steps > 2 ? steps - 2 : 1, 1}, steps);
  CellState init = zero_state(w, rows);
  init.h = tu::random_matrix(g, rows, hidden, -0.5, 0.5);
  if (!init.c.empty()) init.c = tu::random_matrix(g, rows, hidden, -0.5, 0.5);
  std::vector<Matrix> probes;
  for (std::size_t t = 0; t < steps; ++t) probes.push_back(tu::random_matrix(g, rows, hidden));
  const Matrix q = tu::random_matrix(g, rows, hidden);
  const Matrix r = tu::random_matrix(g, rows, hidden);

  auto loss = [&] {
    const auto s = unroll(w, xs, mask, init, false);
    double l = tu::weighted_sum(q, s.final_state().h);
    if (!s.final_state().c.empty()) l += tu::weighted_sum(r, s.final_state().c);
    for (std::size_t t = 0; t < steps; ++t) l += tu::weighted_sum(probes[t], s.h(t + 1));
    return l;
  };
  const auto seq = unroll(w, xs, mask, init);
  CellState d_final{q, {}};
  if constexpr (W::has_memory) d_final.c = r;
  auto grads = unroll_backward(w, seq, probes, d_final);

  double worst = 0.0;
  auto wp = params_of(w);
  auto gp = params_of(grads.weights);
  for (std::size_t k = 0; k < wp.size(); ++k) {
    worst = std::max(worst, tu::max_rel_error(*gp[k].value, tu::numeric_gradient(loss, *wp[k].value)));
  }
  for (std::size_t t = 0; t < steps; ++t) {
    worst = std::max(worst, tu::max_rel_error(grads.inputs[t], tu::numeric_gradient(loss, xs[t])));
  }
  worst = std::max(worst, tu::max_rel_error(grads.initial.h, tu::numeric_gradient(loss, init.h)));
  if constexpr (W::has_memory) {
    worst = std::max(worst, tu::max_rel_error(grads.initial.c, tu::numeric_gradient(loss, init.c)));
  }
  return worst;
}

TYPED_TEST(UnrollTest, BackwardMatchesFiniteDifferencesAtT5H4) {
  Gen g(25);
  EXPECT_LT(unroll_fd_error<TypeParam>(g, 5, 4), 1e-6);
}

TYPED_TEST(UnrollTest, BackwardMatchesFiniteDifferencesOnRandomSizes) {
  Gen g(26);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t steps = tu::random_size(g, 1, 10);
    const std::size_t hidden = tu::random_size(g, 1, 8);
    EXPECT_LT(unroll_fd_error<TypeParam>(g, steps, hidden), 1e-4) << steps << " " << hidden;
  }
}

// ---------------------------------------------------------------------------
// Bidirectional

TEST(Bidirectional, OutputWidthIsTwiceHidden) {
  Gen g(31);
  GruCellWeights f(3, 5), b(3, 5);
  fill_params(f, g);
  fill_params(b, g);
  const auto s = bidirectional(f, b, random_inputs(g, 4, 2, 3), StepMask(4, 2));
  EXPECT_EQ(s.width(), 10u);
  for (const auto& o : s.outputs()) EXPECT_EQ(o.cols(), 10u);
  EXPECT_EQ(s.final_output().cols(), 10u);
}

TEST(Bidirectional, HiddenSizeMismatchIsADimensionError) {
  GruCellWeights f(3, 5), b(3, 4);
  EXPECT_THROW(bidirectional(f, b, std::vector<Matrix>(2, Matrix(1, 3)), StepMask(2, 1)), DimensionError);
}

TEST(Bidirectional, PalindromeWithSharedWeightsIsSymmetric) {
  Gen g(32);
  GruCellWeights w(2, 4);
  fill_params(w, g);
  const std::size_t steps = 7;
  std::vector<Matrix> xs(steps);
  for (std::size_t t = 0; t <= steps / 2; ++t) {
    xs[t] = tu::random_matrix(g, 1, 2);
    xs[steps - 1 - t] = xs[t];
  }
  const auto s = bidirectional(w, w, xs, StepMask(steps, 1));
  for (std::size_t t = 1; t <= steps; ++t) EXPECT_EQ(s.forward.h(t), s.backward.h(t));
  // Aligned outputs: forward at t pairs with the backward state that has
  // seen the suffix from t.
  const auto out = s.outputs();
  for (std::size_t t = 0; t < steps; ++t) {
    EXPECT_EQ(slice_cols(out[t], 4, 4), s.forward.h(steps - t));
  }
}

TEST(Bidirectional, AllMaskedReturnsInitialStates) {
  Gen g(33);
  LstmCellWeights f(2, 3), b(2, 3);
  fill_params(f, g);
  fill_params(b, g);
  const auto s = bidirectional(f, b, random_inputs(g, 3, 2, 2), StepMask(3, 2, false));
  EXPECT_EQ(s.final_output(), Matrix(2, 6));
}

TEST(Bidirectional, BackwardMatchesFiniteDifferences) {
  Gen g(34);
  GruCellWeights f(2, 3), b(2, 3);
  fill_params(f, g);
  fill_params(b, g);
  const std::size_t steps = 5;
  auto xs = random_inputs(g, steps, 3, 2);
  const StepMask mask = StepMask::from_lengths({5, 3, 1}, steps);
  std::vector<Matrix> probes;
  for (std::size_t t = 0; t < steps; ++t) probes.push_back(tu::random_matrix(g, 3, 6));
  // Padded positions are never read downstream; zero their probes.
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t r = 0; r < 3; ++r)
      if (!mask(t, r))
        for (double& v : probes[t].row(r)) v = 0.0;
  const Matrix q = tu::random_matrix(g, 3, 6);
  auto loss = [&] {
    const auto s = bidirectional(f, b, xs, mask, false);
    double l = tu::weighted_sum(q, s.final_output());
    const auto out = s.outputs();
    for (std::size_t t = 0; t < steps; ++t) l += tu::weighted_sum(probes[t], out[t]);
    return l;
  };
  const auto s = bidirectional(f, b, xs, mask);
  auto grads = bidirectional_backward(f, b, s, probes, q);
  auto check = [&](GruCellWeights& w, GruCellWeights& gw) {
    auto wp = params_of(w);
    auto gp = params_of(gw);
    for (std::size_t k = 0; k < wp.size(); ++k) {
      EXPECT_LT(tu::max_rel_error(*gp[k].value, tu::numeric_gradient(loss, *wp[k].value)), 1e-6)
          << wp[k].name;
    }
  };
  check(f, grads.forward);
  check(b, grads.backward);
  for (std::size_t t = 0; t < steps; ++t) {
    EXPECT_LT(tu::max_rel_error(grads.inputs[t], tu::numeric_gradient(loss, xs[t])), 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Stacks

template <class W>
std::vector<Unidirectional<W>> make_stack(Gen& g, std::size_t input, std::size_t hidden,
                                          std::size_t layers) {
  std::vector<Unidirectional<W>> out;
  for (std::size_t i = 0; i < layers; ++i) {
    Unidirectional<W> l{W(i == 0 ? input : hidden, hidden)};
    fill_params(l.cell, g);
    out.push_back(l);
  }
  return out;
}

TEST(Stack, OneLayerEqualsUnroll) {
  Gen g(41);
  auto layers = make_stack<LstmCellWeights>(g, 3, 4, 1);
  const auto xs = random_inputs(g, 5, 2, 3);
  const StepMask mask = StepMask::from_lengths({5, 2}, 5);
  const auto run = stack(layers, xs, mask, 0.3, true, DropoutSource{7, 0});
  const auto seq = unroll(layers[0].cell, xs, mask);
  EXPECT_EQ(run.top_final, seq.final_state().h);
  EXPECT_EQ(run.top_outputs, seq.outputs());
}

TEST(Stack, ZeroDropoutTrainingEqualsInference) {
  Gen g(42);
  auto layers = make_stack<GruCellWeights>(g, 3, 4, 3);
  const auto xs = random_inputs(g, 6, 2, 3);
  const auto a = stack(layers, xs, StepMask(6, 2), 0.0, true, DropoutSource{1, 0});
  const auto b = stack(layers, xs, StepMask(6, 2), 0.0, false);
  EXPECT_EQ(a.top_outputs, b.top_outputs);
  EXPECT_EQ(a.top_final, b.top_final);
}

TEST(Stack, ThreeBySeventyGruShapes) {
  Gen g(43);
  std::vector<Unidirectional<GruCellWeights>> layers;
  for (std::size_t i = 0; i < 3; ++i) {
    layers.push_back({GruCellWeights(i == 0 ? 4 : 70, 70)});
    initialize_cell(layers.back().cell, 5, "rec." + std::to_string(i) + ".");
  }
  const auto run = stack(layers, random_inputs(g, 70, 2, 4), StepMask(70, 2), 0.2, false);
  ASSERT_EQ(run.top_outputs.size(), 70u);
  for (const auto& o : run.top_outputs) EXPECT_EQ(o.cols(), 70u);
}

TEST(Stack, WidthMismatchIsADimensionError) {
  std::vector<Unidirectional<RnnCellWeights>> layers{{RnnCellWeights(3, 4)}, {RnnCellWeights(5, 4)}};
  EXPECT_THROW(stack(layers, std::vector<Matrix>(2, Matrix(1, 3)), StepMask(2, 1), 0.0, false),
               DimensionError);
}

template <class Layer>
double stack_fd_error(std::vector<Layer> layers, Gen& g, std::size_t steps, double dropout) {
  const std::size_t rows = 2;
  auto xs = random_inputs(g, steps, rows, layers.front().input_size());
  const StepMask mask = StepMask::from_lengths({steps, (steps + 1) / 2}, steps);
  const std::size_t width = layers.back().output_size();
  std::vector<Matrix> probes;
  for (std::size_t t = 0; t < steps; ++t) {
    probes.push_back(tu::random_matrix(g, rows, width));
    for (std::size_t r = 0; r < rows; ++r)
      if (!mask(t, r))
        for (double& v : probes[t].row(r)) v = 0.0;
  }
  const Matrix q = tu::random_matrix(g, rows, width);
  const DropoutSource src{99, 0};
  auto loss = [&] {
    const auto run = stack(layers, xs, mask, dropout, true, src);
    double l = tu::weighted_sum(q, run.top_final);
    for (std::size_t t = 0; t < steps; ++t) l += tu::weighted_sum(probes[t], run.top_outputs[t]);
    return l;
  };
  const auto run = stack(layers, xs, mask, dropout, true, src);
  std::vector<Layer> grads = layers;
  for (auto& l : grads)
    for (auto& p : params_of(l)) p.value->set_zero();
  const auto d_in = stack_backward(layers, run, probes, q, grads);
  double worst = 0.0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto wp = params_of(layers[i]);
    auto gp = params_of(grads[i]);
    for (std::size_t k = 0; k < wp.size(); ++k) {
      worst = std::max(worst, tu::max_rel_error(*gp[k].value, tu::numeric_gradient(loss, *wp[k].value)));
    }
  }
  for (std::size_t t = 0; t < steps; ++t) {
    worst = std::max(worst, tu::max_rel_error(d_in[t], tu::numeric_gradient(loss, xs[t])));
  }
  return worst;
}

TEST(Stack, GradientsMatchFiniteDifferencesForEveryCell) {
  Gen g(44);
  for (std::size_t depth : {2u, 3u}) {
    EXPECT_LT(stack_fd_error(make_stack<RnnCellWeights>(g, 3, 5, depth), g, 6, 0.3), 1e-4);
    EXPECT_LT(stack_fd_error(make_stack<LstmCellWeights>(g, 3, 4, depth), g, 7, 0.3), 1e-4);
    EXPECT_LT(stack_fd_error(make_stack<GruCellWeights>(g, 3, 6, depth), g, 8, 0.3), 1e-4);
  }
}

TEST(Stack, BidirectionalGradientsMatchFiniteDifferences) {
  Gen g(45);
  std::vector<Bidirectional<GruCellWeights>> layers;
  for (std::size_t i = 0; i < 2; ++i) {
    Bidirectional<GruCellWeights> l{GruCellWeights(i == 0 ? 3 : 8, 4), GruCellWeights(i == 0 ? 3 : 8, 4)};
    fill_params(l.forward, g);
    fill_params(l.backward, g);
    layers.push_back(l);
  }
  EXPECT_LT(stack_fd_error(layers, g, 6, 0.25), 1e-4);
}

TEST(Stack, BackwardNeedsTrainingRun) {
  Gen g(46);
  auto layers = make_stack<RnnCellWeights>(g, 2, 3, 2);
  const auto run = stack(layers, random_inputs(g, 2, 1, 2), StepMask(2, 1), 0.0, false);
  auto grads = layers;
  EXPECT_THROW(stack_backward(layers, run, {}, Matrix(1, 3), grads), UsageError);
}

}  // namespace
