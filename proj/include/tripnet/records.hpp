// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Labeled trip records and the on-disk dataset format: one JSON object per
// line plus a JSON sidecar holding the schema and normalization statistics.

#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripnet/cells.hpp"
#include "tripnet/embedding.hpp"
#include "tripnet/error.hpp"

namespace tripnet {

using Json = nlohmann::json;

inline constexpr std::size_t kSequenceLength = 70;
inline constexpr std::size_t kStepFeatures = 4;  // sin time, cos time, x, y

using StepFeatures = std::array<double, kStepFeatures>;

// A fixed-length step sequence. Steps past `length` are zero padding.
struct Trajectory {
  std::vector<StepFeatures> steps;
  std::size_t length = 0;

  bool valid(std::size_t t) const { return t < length; }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct TripRecord {
  std::string trip_id;
  std::string split;  // "train" or "test"
  Trajectory trajectory;
  std::vector<std::size_t> categorical;
  std::vector<double> numeric;
  std::optional<std::size_t> mode;
  std::optional<std::size_t> purpose;

  bool has_both_labels() const { return mode.has_value() && purpose.has_value(); }
  friend bool operator==(const TripRecord&, const TripRecord&) = default;
};

struct ColumnStats {
  double mean = 0.0;
  double stddev = 1.0;
  friend bool operator==(const ColumnStats&, const ColumnStats&) = default;
};

struct NormalizationStats {
  std::vector<ColumnStats> numeric;
  std::array<ColumnStats, 2> coordinates{};  // trajectory x/y channels
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

inline std::vector<std::string> default_mode_labels() {
  return {"walk", "bike", "car", "public_transit"};
}

// Six purpose classes; the vocabulary is configuration data.
inline std::vector<std::string> default_purpose_labels() {
  return {"education", "health", "return_home", "shopping", "work", "other"};
}

inline std::vector<std::string> default_numeric_columns() {
  std::vector<std::string> cols = {"HOME_DEST", "STUDY_DEST", "WORK_DEST",
                                   "HOME_ORG",  "STUDY_ORG",  "WORK_ORG"};
  for (int i = 1; i <= 23; ++i) cols.push_back("LU_" + std::to_string(i));
  for (int i = 1; i <= 10; ++i) cols.push_back("CH_" + std::to_string(i));
  for (int i = 1; i <= 10; ++i) cols.push_back("UC_" + std::to_string(i));
  cols.push_back("AVG_PRICE_NEIGH");
  return cols;
}

struct DatasetSchema {
  EmbeddingSchema categorical = default_embedding_schema();
  std::vector<std::string> numeric_columns = default_numeric_columns();
  std::vector<std::string> mode_labels = default_mode_labels();
  std::vector<std::string> purpose_labels = default_purpose_labels();
  std::size_t sequence_length = kSequenceLength;
  std::string coordinate_frame = "step_delta";

  friend bool operator==(const DatasetSchema&, const DatasetSchema&) = default;
};

struct Dataset {
  DatasetSchema schema;
  NormalizationStats stats;
  std::vector<TripRecord> records;
  Json provenance = Json::object();  // counts and generator settings, echoed to the sidecar
};

// ---------------------------------------------------------------------------
// JSON mapping

inline Json to_json(const EmbeddingSchema& s) {
  Json arr = Json::array();
  for (const auto& a : s.attributes()) {
    arr.push_back({{"name", a.name}, {"levels", a.levels}, {"dim", a.dim}});
  }
  return arr;
}

inline EmbeddingSchema embedding_schema_from_json(const Json& j) {
  std::vector<EmbeddingAttribute> attrs;
  for (const auto& a : j) {
    attrs.push_back({a.at("name").get<std::string>(), a.at("levels").get<std::size_t>(),
                     a.at("dim").get<std::size_t>()});
  }
  return EmbeddingSchema(std::move(attrs));
}

inline Json to_json(const DatasetSchema& s) {
  return {{"categorical", to_json(s.categorical)},
          {"numeric_columns", s.numeric_columns},
          {"mode_labels", s.mode_labels},
          {"purpose_labels", s.purpose_labels},
          {"sequence_length", s.sequence_length},
          {"coordinate_frame", s.coordinate_frame}};
}

inline DatasetSchema dataset_schema_from_json(const Json& j) {
  DatasetSchema s;
  s.categorical = embedding_schema_from_json(j.at("categorical"));
  s.numeric_columns = j.at("numeric_columns").get<std::vector<std::string>>();
  s.mode_labels = j.at("mode_labels").get<std::vector<std::string>>();
  s.purpose_labels = j.at("purpose_labels").get<std::vector<std::string>>();
  s.sequence_length = j.at("sequence_length").get<std::size_t>();
  s.coordinate_frame = j.at("coordinate_frame").get<std::string>();
  return s;
}

inline Json to_json(const ColumnStats& c) { return {{"mean", c.mean}, {"stddev", c.stddev}}; }
inline ColumnStats column_stats_from_json(const Json& j) {
  return {j.at("mean").get<double>(), j.at("stddev").get<double>()};
}

inline Json to_json(const NormalizationStats& s) {
  Json num = Json::array();
  for (const auto& c : s.numeric) num.push_back(to_json(c));
  return {{"numeric", num},
          {"coordinates", Json::array({to_json(s.coordinates[0]), to_json(s.coordinates[1])})}};
}

inline NormalizationStats normalization_stats_from_json(const Json& j) {
  NormalizationStats s;
  for (const auto& c : j.at("numeric")) s.numeric.push_back(column_stats_from_json(c));
  s.coordinates[0] = column_stats_from_json(j.at("coordinates").at(0));
  s.coordinates[1] = column_stats_from_json(j.at("coordinates").at(1));
  return s;
}

inline Json to_json(const TripRecord& r) {
  Json steps = Json::array();
  for (std::size_t t = 0; t < r.trajectory.length; ++t) {
    const auto& s = r.trajectory.steps[t];
    steps.push_back(Json::array({s[0], s[1], s[2], s[3]}));
  }
  Json j = {{"trip_id", r.trip_id},
            {"split", r.split},
            {"length", r.trajectory.length},
            {"steps", steps},
            {"categorical", r.categorical},
            {"numeric", r.numeric}};
  j["mode"] = r.mode ? Json(*r.mode) : Json(nullptr);
  j["purpose"] = r.purpose ? Json(*r.purpose) : Json(nullptr);
  return j;
}

inline TripRecord trip_record_from_json(const Json& j, std::size_t sequence_length) {
  TripRecord r;
  r.trip_id = j.at("trip_id").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.trajectory.length = j.at("length").get<std::size_t>();
  if (r.trajectory.length > sequence_length) {
    throw ContractError("trip " + r.trip_id + " longer than sequence length");
  }
  r.trajectory.steps.assign(sequence_length, StepFeatures{});
  const auto& steps = j.at("steps");
  if (steps.size() != r.trajectory.length) {
    throw ContractError("trip " + r.trip_id + " step count does not match its length");
  }
  for (std::size_t t = 0; t < steps.size(); ++t) {
    for (std::size_t k = 0; k < kStepFeatures; ++k) {
      r.trajectory.steps[t][k] = steps[t].at(k).get<double>();
    }
  }
  r.categorical = j.at("categorical").get<std::vector<std::size_t>>();
  r.numeric = j.at("numeric").get<std::vector<double>>();
  if (!j.at("mode").is_null()) r.mode = j.at("mode").get<std::size_t>();
  if (!j.at("purpose").is_null()) r.purpose = j.at("purpose").get<std::size_t>();
  return r;
}

// ---------------------------------------------------------------------------
// Files: <path> holds the records, <path>.schema.json the sidecar.

inline std::filesystem::path sidecar_path(const std::filesystem::path& dataset) {
  return std::filesystem::path(dataset.string() + ".schema.json");
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestionError("cannot write " + path.string());
    for (const auto& r : ds.records) out << to_json(r).dump() << '\n';
  }
  Json side = {{"schema", to_json(ds.schema)},
               {"stats", to_json(ds.stats)},
               {"records", ds.records.size()},
               {"provenance", ds.provenance}};
  std::ofstream out(sidecar_path(path), std::ios::binary);
  if (!out) throw IngestionError("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << '\n';
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  Dataset ds;
  std::ifstream side(sidecar_path(path));
  if (!side) throw IngestionError("missing dataset sidecar " + sidecar_path(path).string());
  Json sj;
  try {
    sj = Json::parse(side);
  } catch (const Json::exception& e) {
    throw IngestionError(sidecar_path(path).string() + ": " + e.what());
  }
  ds.schema = dataset_schema_from_json(sj.at("schema"));
  ds.stats = normalization_stats_from_json(sj.at("stats"));
  if (sj.contains("provenance")) ds.provenance = sj.at("provenance");

  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read dataset " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ds.records.push_back(trip_record_from_json(Json::parse(line), ds.schema.sequence_length));
    } catch (const Json::exception& e) {
      throw ParseError(path.string(), lineno, 1, e.what());
    }
    const auto& r = ds.records.back();
    if (r.categorical.size() != ds.schema.categorical.size() ||
        r.numeric.size() != ds.schema.numeric_columns.size()) {
      throw ParseError(path.string(), lineno, 1, "feature counts do not match the schema");
    }
  }
  return ds;
}

}  // namespace tripnet
