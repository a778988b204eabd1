// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Shared generators and numeric oracles for the test binaries.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tripnet/tensor.hpp"

namespace tripnet::test_util {

using Gen = std::mt19937_64;

inline Matrix random_matrix(Gen& g, std::size_t rows, std::size_t cols, double lo = -2.0,
                            double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = u(g);
  return m;
}

inline std::size_t random_size(Gen& g, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(g);
}

// Textbook triple loop, kept separate from the library kernel.
inline Matrix reference_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t p = 0; p < a.cols(); ++p) s += static_cast<long double>(a(i, p)) * b(p, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

// Central-difference gradient of f with respect to every entry of x.
inline Matrix numeric_gradient(const std::function<double()>& f, Matrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_rel_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / d);
  }
  return worst;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// sum(w ⊙ m): a scalar probe whose gradient w.r.t. m is w.
inline double weighted_sum(const Matrix& w, const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += w[i] * m[i];
  return s;
}

}  // namespace tripnet::test_util
