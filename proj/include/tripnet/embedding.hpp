// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Entity embeddings for categorical auxiliary attributes.

#pragma once

#include <set>
#include <string>
#include <vector>

#include "tripnet/cells.hpp"
#include "tripnet/error.hpp"
#include "tripnet/rng.hpp"
#include "tripnet/tensor.hpp"

namespace tripnet {

struct EmbeddingAttribute {
  std::string name;
  std::size_t levels = 0;  // observed category levels; code `levels` means missing
  std::size_t dim = 1;

  std::size_t cardinality() const { return levels + 1; }
  std::size_t missing_code() const { return levels; }

  friend bool operator==(const EmbeddingAttribute&, const EmbeddingAttribute&) = default;
};

class EmbeddingSchema {
 public:
  EmbeddingSchema() = default;
  explicit EmbeddingSchema(std::vector<EmbeddingAttribute> attrs) : attrs_(std::move(attrs)) {
    std::set<std::string> seen;
    for (const auto& a : attrs_) {
      if (a.dim < 1) throw ContractError("embedding dim for '" + a.name + "' must be >= 1");
      if (a.levels < 1) throw ContractError("attribute '" + a.name + "' needs at least one level");
      if (!seen.insert(a.name).second) {
        throw ContractError("duplicate embedding attribute '" + a.name + "'");
      }
    }
  }

  const std::vector<EmbeddingAttribute>& attributes() const { return attrs_; }
  std::size_t size() const { return attrs_.size(); }
  std::size_t output_width() const {
    std::size_t w = 0;
    for (const auto& a : attrs_) w += a.dim;
    return w;
  }
  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < attrs_.size(); ++i)
      if (attrs_[i].name == name) return i;
    throw ContractError("unknown embedding attribute '" + name + "'");
  }

  friend bool operator==(const EmbeddingSchema&, const EmbeddingSchema&) = default;

 private:
  std::vector<EmbeddingAttribute> attrs_;
};

// Categorical attributes with embedding widths, in the order listed for the
// auxiliary feature table: day of week (7 levels), start/end hour (0..24),
// four binary location flags, sex (3), occupation (6), age band (6).
inline EmbeddingSchema default_embedding_schema() {
  return EmbeddingSchema({
      {"DAY_OF_WEEK", 7, 4},
      {"HOUR_START", 25, 12},
      {"HOUR_END", 25, 12},
      {"CBD_ORIGIN", 2, 1},
      {"CBD_DESTIN", 2, 1},
      {"MTL_ORIGIN", 2, 1},
      {"MTL_DESTIN", 2, 1},
      {"SEX", 3, 2},
      {"OCCUPATION", 6, 2},
      {"AGE", 6, 3},
  });
}

struct EmbeddingTable {
  std::size_t cardinality() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }

  Matrix weights;  // cardinality x dim
};

struct EmbeddingTables {
  EmbeddingTables() = default;
  explicit EmbeddingTables(const EmbeddingSchema& schema) {
    for (const auto& a : schema.attributes()) tables.push_back({Matrix(a.cardinality(), a.dim)});
  }

  void initialize(std::uint64_t seed, const std::string& prefix = "embed.") {
    for (auto& p : params_of(*this, prefix)) fill_uniform(*p.value, 0.05, seed, p.name);
  }

  void collect(const std::string& prefix, ParamList& out) {
    for (std::size_t i = 0; i < tables.size(); ++i) {
      out.push_back({prefix + std::to_string(i), &tables[i].weights});
    }
  }

  std::vector<EmbeddingTable> tables;
};

// codes[row][attribute]
using CategoryCodes = std::vector<std::vector<std::size_t>>;

struct EmbeddingCache {
  CategoryCodes codes;
};

// Concatenated lookups, one output row per input row, in schema order.
inline Matrix embed(const EmbeddingSchema& schema, const EmbeddingTables& tables,
                    const CategoryCodes& codes, EmbeddingCache* cache = nullptr) {
  const auto& attrs = schema.attributes();
  if (tables.tables.size() != attrs.size()) {
    throw DimensionError("schema has " + std::to_string(attrs.size()) + " attributes but " +
                         std::to_string(tables.tables.size()) + " tables were given");
  }
  Matrix out(codes.size(), schema.output_width());
  for (std::size_t r = 0; r < codes.size(); ++r) {
    if (codes[r].size() != attrs.size()) {
      throw DimensionError("row " + std::to_string(r) + " has " + std::to_string(codes[r].size()) +
                           " codes, schema has " + std::to_string(attrs.size()));
    }
    std::size_t off = 0;
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      const Matrix& table = tables.tables[a].weights;
      if (table.cols() != attrs[a].dim) {
        throw DimensionError("table for '" + attrs[a].name + "' is " + table.shape());
      }
      const std::size_t code = codes[r][a];
      if (code >= table.rows()) throw CategoricalDomainError(attrs[a].name, code, table.rows());
      const auto src = table.row(code);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
      off += attrs[a].dim;
    }
  }
  if (cache) cache->codes = codes;
  return out;
}

// Scatters upstream row slices into the looked-up rows of `grads`.
inline void embed_backward(const EmbeddingSchema& schema, const EmbeddingCache* cache,
                           const Matrix& upstream, EmbeddingTables& grads) {
  if (!cache) throw UsageError("embed_backward needs the forward cache");
  const auto& attrs = schema.attributes();
  if (upstream.rows() != cache->codes.size() || upstream.cols() != schema.output_width()) {
    throw DimensionError("embedding upstream " + upstream.shape() + " does not match forward");
  }
  for (std::size_t r = 0; r < cache->codes.size(); ++r) {
    std::size_t off = 0;
    const auto up = upstream.row(r);
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      auto dst = grads.tables[a].weights.row(cache->codes[r][a]);
      for (std::size_t c = 0; c < attrs[a].dim; ++c) dst[c] += up[off + c];
      off += attrs[a].dim;
    }
  }
}

}  // namespace tripnet
