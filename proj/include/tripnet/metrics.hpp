// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Multi-class evaluation and the learner comparison table.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "tripnet/error.hpp"

namespace tripnet {

// Counts with true class by row and predicted class by column.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : k_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return k_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const {
    return counts_[truth * k_ + pred];
  }

  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1) {
    if (truth >= k_ || pred >= k_) {
      throw ContractError("class index out of range for a " + std::to_string(k_) + "-class matrix");
    }
    counts_[truth * k_ + pred] += n;
  }

  void add_all(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred) {
    if (truth.size() != pred.size()) throw DimensionError("truth and prediction lengths differ");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
  }

  void merge(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw DimensionError("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t c = 0; c < k_; ++c) t += (*this)(c, c);
    return t;
  }
  std::uint64_t row_sum(std::size_t r) const {
    std::uint64_t t = 0;
    for (std::size_t c = 0; c < k_; ++c) t += (*this)(r, c);
    return t;
  }
  std::uint64_t col_sum(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::size_t r = 0; r < k_; ++r) t += (*this)(r, c);
    return t;
  }

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix cm(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.size()) throw DimensionError("confusion matrix must be square");
      for (std::size_t c = 0; c < rows.size(); ++c) cm.add(r, c, rows[r][c]);
    }
    return cm;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

// 100 * correct / total
inline double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw ContractError("accuracy of an empty confusion matrix");
  return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);
}

enum class Averaging { macro, weighted };

struct PrecisionRecall {
  std::vector<double> class_precision;  // percent
  std::vector<double> class_recall;     // percent
  double precision = 0.0;
  double recall = 0.0;
};

// Per-class P and R; aggregates average over classes that occur in the
// truth. A class never predicted has precision 0.
inline PrecisionRecall precision_recall(const ConfusionMatrix& cm,
                                        Averaging avg = Averaging::macro) {
  if (cm.total() == 0) throw ContractError("precision/recall of an empty confusion matrix");
  PrecisionRecall pr;
  double wsum = 0.0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const double tp = static_cast<double>(cm(c, c));
    const auto col = cm.col_sum(c);
    const auto row = cm.row_sum(c);
    const double p = col == 0 ? 0.0 : 100.0 * tp / static_cast<double>(col);
    const double r = row == 0 ? 0.0 : 100.0 * tp / static_cast<double>(row);
    pr.class_precision.push_back(p);
    pr.class_recall.push_back(r);
    if (row == 0) continue;
    const double w = avg == Averaging::macro ? 1.0 : static_cast<double>(row);
    pr.precision += w * p;
    pr.recall += w * r;
    wsum += w;
  }
  pr.precision /= wsum;
  pr.recall /= wsum;
  return pr;
}

// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

struct MetricsReport {
  std::string learner;  // "single" | "multi"
  std::string task;     // "mode" | "purpose"
  std::string model;    // e.g. "GRU"
  std::size_t epoch = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> class_precision;
  std::vector<double> class_recall;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport make_report(const ConfusionMatrix& cm, std::string learner, std::string task,
                                 std::string model, std::size_t epoch,
                                 Averaging avg = Averaging::macro) {
  const auto pr = precision_recall(cm, avg);
  MetricsReport r{std::move(learner), std::move(task), std::move(model), epoch, accuracy(cm),
                  pr.precision, pr.recall, f1(pr.precision, pr.recall), pr.class_precision,
                  pr.class_recall};
  return r;
}

// ---------------------------------------------------------------------------
// Comparison table

struct ComparisonTable {
  std::vector<MetricsReport> rows;
  std::size_t epoch = 0;
  std::optional<std::string> notice;
};

namespace detail {

inline int model_rank(const std::string& m) {
  static const std::vector<std::string> order = {"RNN", "LSTM", "GRU", "Bi-LSTM", "Bi-GRU"};
  auto it = std::find(order.begin(), order.end(), m);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

inline std::string learner_label(const std::string& l) {
  if (l == "single") return "Single-task";
  if (l == "multi") return "Multi-task";
  return l;
}

inline std::string task_label(const std::string& t) {
  if (t == "mode") return "Mode classification";
  if (t == "purpose") return "Purpose classification";
  return t;
}

inline std::string shortest(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

// Rows ordered single before multi, mode before purpose, then by cell kind.
inline ComparisonTable compare_report(const std::vector<MetricsReport>& single,
                                      const std::vector<MetricsReport>& multi) {
  ComparisonTable t;
  std::optional<std::size_t> epoch;
  for (const auto* set : {&single, &multi}) {
    for (const auto& r : *set) {
      if (epoch && *epoch != r.epoch) {
        throw ContractError("reports come from different epochs (" + std::to_string(*epoch) +
                            " and " + std::to_string(r.epoch) + ")");
      }
      epoch = r.epoch;
      t.rows.push_back(r);
    }
  }
  t.epoch = epoch.value_or(0);
  if (multi.empty()) t.notice = "no multi-task reports; showing single-task learners only";
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const MetricsReport& a, const MetricsReport& b) {
    auto key = [](const MetricsReport& r) {
      return std::tuple(r.learner == "multi", r.task == "purpose", detail::model_rank(r.model),
                        r.model);
    };
    return key(a) < key(b);
  });
  return t;
}

inline std::string render_text(const ComparisonTable& t) {
  std::ostringstream out;
  const char* head[] = {"Learner", "Task", "Model", "Accuracy (%)", "Precision (%)", "Recall (%)",
                        "F1-Measure (%)"};
  std::vector<std::vector<std::string>> cells;
  cells.emplace_back(std::begin(head), std::end(head));
  for (const auto& r : t.rows) {
    auto fmt = [](double v) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(2) << v;
      return s.str();
    };
    cells.push_back({detail::learner_label(r.learner), detail::task_label(r.task), r.model,
                     fmt(r.accuracy), fmt(r.precision), fmt(r.recall), fmt(r.f1)});
  }
  std::vector<std::size_t> width(7, 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  if (t.notice) out << "# " << *t.notice << '\n';
  out << "# epoch " << t.epoch << '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const bool numeric = c >= 3;
      out << (c ? "  " : "") << (numeric ? std::right : std::left)
          << std::setw(static_cast<int>(width[c])) << cells[i][c];
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

inline constexpr const char* kReportHeader = "learner,task,model,epoch,accuracy,precision,recall,f1";

// Values in shortest round-trip form, so re-parsing is exact.
inline std::string render_delimited(const ComparisonTable& t) {
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (const auto& r : t.rows) {
    out << r.learner << ',' << r.task << ',' << r.model << ',' << r.epoch << ','
        << detail::shortest(r.accuracy) << ',' << detail::shortest(r.precision) << ','
        << detail::shortest(r.recall) << ',' << detail::shortest(r.f1) << '\n';
  }
  return out.str();
}

inline std::vector<MetricsReport> parse_delimited(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<MetricsReport> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == kReportHeader) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw ParseError("<report>", lineno, f.size() + 1, "expected 8 fields");
    MetricsReport r;
    r.learner = f[0];
    r.task = f[1];
    r.model = f[2];
    auto num = [&](const std::string& s, std::size_t col, auto& out) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw ParseError("<report>", lineno, col, "malformed number '" + s + "'");
      }
    };
    num(f[3], 4, r.epoch);
    num(f[4], 5, r.accuracy);
    num(f[5], 6, r.precision);
    num(f[6], 7, r.recall);
    num(f[7], 8, r.f1);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace tripnet
