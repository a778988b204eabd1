// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Dense row-major 2-D matrices of doubles with forward kernels and their
// analytic backward counterparts. Everything else in tripnet is composed from
// these primitives; there is no autodiff tape.
//
// All reductions run in a fixed index order so results are reproducible and
// independent of the number of rows in a batch.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tripnet/error.hpp"

#if defined(TRIPNET_LIBMVEC) && (defined(__AVX512F__) || defined(__AVX2__))
#include <immintrin.h>
#define TRIPNET_VECTOR_MATH 1
#endif

namespace tripnet {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(rows_, cols_));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged initializer for Matrix");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::string shape() const { return shape_string(rows_, cols_); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(0.0); }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  void require_same(const Matrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw DimensionError(std::string("shape mismatch in ") + op + ": " + shape() + " vs " +
                           o.shape());
    }
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A value with its accumulated gradient.
struct DualMatrix {
  DualMatrix() = default;
  explicit DualMatrix(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }

  Matrix value;
  Matrix grad;
};

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw NumericError(std::string("non-finite value in ") + what);
}

// ---------------------------------------------------------------------------
// Matrix products

// c += a * b
namespace detail {

using Vec8 = double __attribute__((vector_size(64)));

// c[i, j] += sum_p a(i, p) * b[p, j], accumulating p in ascending order for
// every element so results do not depend on blocking. a(i, p) is read as
// ad[i * si + p * sp].
template <std::size_t MR>
inline void gemm_tile(const double* ad, std::size_t si, std::size_t sp, const double* bd,
                      double* cd, std::size_t i, std::size_t j, std::size_t k, std::size_t n) {
  constexpr std::size_t W = 8;
  Vec8 acc[MR][2];
  for (std::size_t r = 0; r < MR; ++r) {
    std::memcpy(&acc[r][0], cd + (i + r) * n + j, sizeof(Vec8));
    std::memcpy(&acc[r][1], cd + (i + r) * n + j + W, sizeof(Vec8));
  }
  for (std::size_t p = 0; p < k; ++p) {
    Vec8 b0, b1;
    std::memcpy(&b0, bd + p * n + j, sizeof(Vec8));
    std::memcpy(&b1, bd + p * n + j + W, sizeof(Vec8));
    for (std::size_t r = 0; r < MR; ++r) {
      const double av = ad[(i + r) * si + p * sp];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    std::memcpy(cd + (i + r) * n + j, &acc[r][0], sizeof(Vec8));
    std::memcpy(cd + (i + r) * n + j + W, &acc[r][1], sizeof(Vec8));
  }
}

// Tile over columns j..j+w (w <= 8); bp holds those columns of b
// zero-padded to 8 per row.
template <std::size_t MR>
inline void gemm_tail_tile(const double* ad, std::size_t si, std::size_t sp, const double* bp,
                           double* cd, std::size_t i, std::size_t j, std::size_t w, std::size_t k,
                           std::size_t n) {
  Vec8 acc[MR] = {};
  for (std::size_t r = 0; r < MR; ++r) std::memcpy(&acc[r], cd + (i + r) * n + j, w * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    Vec8 b;
    std::memcpy(&b, bp + p * 8, sizeof(Vec8));
    for (std::size_t r = 0; r < MR; ++r) acc[r] += ad[(i + r) * si + p * sp] * b;
  }
  for (std::size_t r = 0; r < MR; ++r) std::memcpy(cd + (i + r) * n + j, &acc[r], w * sizeof(double));
}

inline void gemm_kernel(const double* ad, std::size_t si, std::size_t sp, const double* bd,
                        double* cd, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t MR = 8, NR = 16;
  std::size_t j = 0;
  for (; j + NR <= n; j += NR) {
    std::size_t i = 0;
    for (; i + MR <= m; i += MR) gemm_tile<MR>(ad, si, sp, bd, cd, i, j, k, n);
    for (; i < m; ++i) gemm_tile<1>(ad, si, sp, bd, cd, i, j, k, n);
  }
  std::vector<double> bp(k * 8);
  for (; j < n; j += 8) {
    const std::size_t w = std::min<std::size_t>(8, n - j);
    std::fill(bp.begin(), bp.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) std::memcpy(&bp[p * 8], bd + p * n + j, w * sizeof(double));
    std::size_t i = 0;
    for (; i + MR <= m; i += MR) gemm_tail_tile<MR>(ad, si, sp, bp.data(), cd, i, j, w, k, n);
    for (; i < m; ++i) gemm_tail_tile<1>(ad, si, sp, bp.data(), cd, i, j, w, k, n);
  }
}

}  // namespace detail

inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape() + " x " + b.shape());
  }
  if (c.rows() != a.rows() || c.cols() != b.cols()) {
    throw DimensionError("matmul output " + c.shape() + " for " + a.shape() + " x " + b.shape());
  }
  detail::gemm_kernel(a.values().data(), a.cols(), 1, b.values().data(), c.values().data(),
                      a.rows(), a.cols(), b.cols());
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  matmul_acc(a, b, c);
  return c;
}

// c += a^T * b
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
    throw DimensionError("matmul_tn: " + a.shape() + "^T x " + b.shape() + " -> " + c.shape());
  }
  detail::gemm_kernel(a.values().data(), 1, a.cols(), b.values().data(), c.values().data(),
                      a.cols(), a.rows(), b.cols());
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// c += a * b^T
inline void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.shape() + " x " + b.shape() + "^T");
  }
  matmul_acc(a, transpose(b), c);
}

struct MatmulGrads {
  Matrix da;
  Matrix db;
};

// For c = a * b: da = dc * b^T, db = a^T * dc.
inline MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dc) {
  if (dc.rows() != a.rows() || dc.cols() != b.cols()) {
    throw DimensionError("matmul_backward: upstream " + dc.shape() + " for " + a.shape() + " x " +
                         b.shape());
  }
  MatmulGrads g{Matrix(a.rows(), a.cols()), Matrix(b.rows(), b.cols())};
  matmul_nt_acc(dc, b, g.da);
  matmul_tn_acc(a, dc, g.db);
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise

enum class Ewise { add, sub, mul };

namespace detail {
inline bool broadcasts(const Matrix& a, const Matrix& b) {
  return b.rows() == 1 && b.cols() == a.cols() && a.rows() != 1;
}
}  // namespace detail

// b may be a single bias row broadcast over the rows of a.
inline Matrix ewise(Ewise op, const Matrix& a, const Matrix& b) {
  const bool bc = detail::broadcasts(a, b);
  if (!bc && !a.same_shape(b)) {
    throw DimensionError("ewise: incompatible shapes " + a.shape() + " and " + b.shape());
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto ar = a.row(r);
    const auto br = b.row(bc ? 0 : r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) {
      switch (op) {
        case Ewise::add: o[c] = ar[c] + br[c]; break;
        case Ewise::sub: o[c] = ar[c] - br[c]; break;
        case Ewise::mul: o[c] = ar[c] * br[c]; break;
      }
    }
  }
  return out;
}

struct EwiseGrads {
  Matrix da;
  Matrix db;  // summed over rows when b was broadcast
};

inline EwiseGrads ewise_backward(Ewise op, const Matrix& a, const Matrix& b, const Matrix& dc) {
  const bool bc = detail::broadcasts(a, b);
  if ((!bc && !a.same_shape(b)) || !dc.same_shape(a)) {
    throw DimensionError("ewise_backward: incompatible shapes " + a.shape() + ", " + b.shape() +
                         ", upstream " + dc.shape());
  }
  EwiseGrads g{Matrix(a.rows(), a.cols()), Matrix(b.rows(), b.cols())};
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const std::size_t rb = bc ? 0 : r;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const double d = dc(r, c);
      switch (op) {
        case Ewise::add:
          g.da(r, c) = d;
          g.db(rb, c) += d;
          break;
        case Ewise::sub:
          g.da(r, c) = d;
          g.db(rb, c) -= d;
          break;
        case Ewise::mul:
          g.da(r, c) = d * b(rb, c);
          g.db(rb, c) += d * a(r, c);
          break;
      }
    }
  }
  return g;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) { return ewise(Ewise::mul, a, b); }

// a += bias row broadcast
inline void add_row_inplace(Matrix& a, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw DimensionError("bias " + bias.shape() + " does not broadcast over " + a.shape());
  }
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto ar = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) ar[c] += bias[c];
  }
}

// acc(1 x n) += column sums of m
inline void add_col_sums(const Matrix& m, Matrix& acc) {
  if (acc.rows() != 1 || acc.cols() != m.cols()) {
    throw DimensionError("column-sum target " + acc.shape() + " for " + m.shape());
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto mr = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) acc[c] += mr[c];
  }
}

inline Matrix concat_cols(std::span<const Matrix* const> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front()->rows();
  std::size_t cols = 0;
  for (const Matrix* p : parts) {
    if (p->rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p->cols();
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (const Matrix* p : parts) {
      const auto pr = p->row(r);
      std::copy(pr.begin(), pr.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
      off += p->cols();
    }
  }
  return out;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  const Matrix* parts[] = {&a, &b};
  return concat_cols(parts);
}

// Columns [begin, begin + count) of m.
inline Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) throw DimensionError("slice_cols out of range for " + m.shape());
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto mr = m.row(r);
    std::copy(mr.begin() + static_cast<std::ptrdiff_t>(begin),
              mr.begin() + static_cast<std::ptrdiff_t>(begin + count), out.row(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

struct Activation {
  enum class Kind { identity, sigmoid, tanh, relu, leaky_relu, softmax_rows };

  Kind kind = Kind::tanh;
  double alpha = 0.05;  // leaky_relu slope

  static Activation identity() { return {Kind::identity}; }
  static Activation sigmoid() { return {Kind::sigmoid}; }
  static Activation tanh() { return {Kind::tanh}; }
  static Activation relu() { return {Kind::relu}; }
  static Activation leaky_relu(double a = 0.05) { return {Kind::leaky_relu, a}; }
  static Activation softmax_rows() { return {Kind::softmax_rows}; }

  friend bool operator==(const Activation&, const Activation&) = default;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise exp and tanh over whole buffers. With glibc's vector math
// library every element, including a ragged tail, goes through the same
// vector routine, so a value's result never depends on where it sits.
namespace detail {

#ifdef TRIPNET_VECTOR_MATH
#ifdef __AVX512F__
using VecD = __m512d;
inline constexpr std::size_t kVecWidth = 8;
extern "C" VecD _ZGVeN8v_exp(VecD);
extern "C" VecD _ZGVeN8v_tanh(VecD);
inline VecD vec_exp(VecD v) { return _ZGVeN8v_exp(v); }
inline VecD vec_tanh(VecD v) { return _ZGVeN8v_tanh(v); }
#else
using VecD = __m256d;
inline constexpr std::size_t kVecWidth = 4;
extern "C" VecD _ZGVdN4v_exp(VecD);
extern "C" VecD _ZGVdN4v_tanh(VecD);
inline VecD vec_exp(VecD v) { return _ZGVdN4v_exp(v); }
inline VecD vec_tanh(VecD v) { return _ZGVdN4v_tanh(v); }
#endif

template <VecD (*F)(VecD)>
void vec_map(std::span<double> v) {
  std::size_t i = 0;
  for (; i + kVecWidth <= v.size(); i += kVecWidth) {
    VecD x;
    std::memcpy(&x, v.data() + i, sizeof x);
    x = F(x);
    std::memcpy(v.data() + i, &x, sizeof x);
  }
  if (i < v.size()) {
    double buf[kVecWidth] = {};
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(i), v.end(), buf);
    VecD x;
    std::memcpy(&x, buf, sizeof x);
    x = F(x);
    std::memcpy(buf, &x, sizeof x);
    std::copy(buf, buf + (v.size() - i), v.begin() + static_cast<std::ptrdiff_t>(i));
  }
}

inline void exp_inplace(std::span<double> v) { vec_map<vec_exp>(v); }
inline void tanh_inplace(std::span<double> v) { vec_map<vec_tanh>(v); }
#else
inline void exp_inplace(std::span<double> v) {
  for (double& x : v) x = std::exp(x);
}
inline void tanh_inplace(std::span<double> v) {
  for (double& x : v) x = std::tanh(x);
}
#endif

// sigmoid(x) = 1 / (1 + e) or e / (1 + e) with e = exp(-|x|) <= 1.
inline void sigmoid_inplace(std::span<double> v) {
  std::vector<double> e(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) e[i] = -std::abs(v[i]);
  exp_inplace(e);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] >= 0.0 ? 1.0 : e[i]) / (1.0 + e[i]);
}

}  // namespace detail

inline double apply_scalar(const Activation& act, double x) {
  switch (act.kind) {
    case Activation::Kind::identity: return x;
    case Activation::Kind::sigmoid: return sigmoid(x);
    case Activation::Kind::tanh: return std::tanh(x);
    case Activation::Kind::relu: return x > 0.0 ? x : 0.0;
    case Activation::Kind::leaky_relu: return x > 0.0 ? x : act.alpha * x;
    case Activation::Kind::softmax_rows: break;
  }
  throw UsageError("softmax_rows has no scalar form");
}

// Derivative expressed through the input x and output y.
inline double derivative_scalar(const Activation& act, double x, double y) {
  switch (act.kind) {
    case Activation::Kind::identity: return 1.0;
    case Activation::Kind::sigmoid: return y * (1.0 - y);
    case Activation::Kind::tanh: return 1.0 - y * y;
    case Activation::Kind::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Kind::leaky_relu: return x > 0.0 ? 1.0 : act.alpha;
    case Activation::Kind::softmax_rows: break;
  }
  throw UsageError("softmax_rows has no scalar derivative");
}

inline void softmax_rows_inplace(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

inline Matrix activate(const Activation& act, const Matrix& x) {
  require_finite(x, "activation input");
  Matrix y = x;
  if (act.kind == Activation::Kind::softmax_rows) {
    softmax_rows_inplace(y);
    return y;
  }
  if (act.kind == Activation::Kind::identity) return y;
  if (act.kind == Activation::Kind::sigmoid) {
    detail::sigmoid_inplace(y.values());
  } else if (act.kind == Activation::Kind::tanh) {
    detail::tanh_inplace(y.values());
  } else {
    for (double& v : y.values()) v = apply_scalar(act, v);
  }
  return y;
}

// Gradient w.r.t. x given forward input x, output y and upstream dy.
inline Matrix activate_backward(const Activation& act, const Matrix& x, const Matrix& y,
                                const Matrix& dy) {
  x.require_same(y, "activate_backward");
  y.require_same(dy, "activate_backward");
  Matrix dx(x.rows(), x.cols());
  if (act.kind == Activation::Kind::softmax_rows) {
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const auto yr = y.row(r);
      const auto dyr = dy.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += dyr[c] * yr[c];
      auto dxr = dx.row(r);
      for (std::size_t c = 0; c < y.cols(); ++c) dxr[c] = yr[c] * (dyr[c] - dot);
    }
    return dx;
  }
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * derivative_scalar(act, x[i], y[i]);
  return dx;
}

}  // namespace tripnet
