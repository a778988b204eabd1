// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Seeded randomness. Sequential draws use std::mt19937_64; dropout masks and
// parameter initialization use counter-based hashing so that a value depends
// only on its coordinates (seed, site, step, row, column), never on how many
// draws happened before it.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "tripnet/tensor.hpp"

namespace tripnet {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// Uniform in [0, 1) from 53 hashed bits.
inline double unit_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Deterministic uniform(-limit, limit) fill keyed by (seed, name).
inline void fill_uniform(Matrix& m, double limit, std::uint64_t seed, std::string_view name) {
  Rng rng(hash_combine(seed, hash_string(name)));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : m.values()) v = dist(rng);
}

inline void fill_glorot(Matrix& m, std::uint64_t seed, std::string_view name) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  fill_uniform(m, limit, seed, name);
}

// Inverted-dropout mask: entries are 0 or 1/(1-p). The keep decision for a
// cell is a pure function of (seed, site, step, global row, column).
struct DropoutSource {
  std::uint64_t seed = 0;
  std::size_t row_offset = 0;

  Matrix mask(double p, std::uint64_t site, std::uint64_t step, std::size_t rows,
              std::size_t cols) const {
    Matrix m(rows, cols);
    const double scale = 1.0 / (1.0 - p);
    const std::uint64_t base = hash_combine(hash_combine(seed, site), step);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::uint64_t rb = hash_combine(base, row_offset + r);
      for (std::size_t c = 0; c < cols; ++c) {
        m(r, c) = unit_from_bits(hash_combine(rb, c)) >= p ? scale : 0.0;
      }
    }
    return m;
  }
};

}  // namespace tripnet
