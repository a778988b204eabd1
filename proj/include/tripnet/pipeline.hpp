// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Raw GPS streams and auxiliary survey tables to TripRecords: trip breaking
// with transit stitching, cyclical time encoding, fixed-length resampling,
// feature joins and standardization.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tripnet/error.hpp"
#include "tripnet/records.hpp"
#include "tripnet/rng.hpp"

namespace tripnet {

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr double kEarthRadiusM = 6371008.8;

// ---------------------------------------------------------------------------
// Geometry

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
  friend bool operator==(const LatLon&, const LatLon&) = default;
};

inline double haversine_m(const LatLon& a, const LatLon& b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(s)));
}

// Local east/north metres of b relative to a (equirectangular).
inline std::pair<double, double> local_offset_m(const LatLon& a, const LatLon& b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double mid = (a.lat + b.lat) / 2.0 * rad;
  return {(b.lon - a.lon) * rad * std::cos(mid) * kEarthRadiusM,
          (b.lat - a.lat) * rad * kEarthRadiusM};
}

inline LatLon offset_point(const LatLon& origin, double east_m, double north_m) {
  constexpr double deg = 180.0 / std::numbers::pi;
  const double lat = origin.lat + north_m / kEarthRadiusM * deg;
  const double mid = (origin.lat + lat) / 2.0 / deg;
  return {lat, origin.lon + east_m / (kEarthRadiusM * std::cos(mid)) * deg};
}

// Ray casting; vertices in order, implicitly closed.
inline bool point_in_polygon(const LatLon& p, const std::vector<LatLon>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.lat > p.lat) != (b.lat > p.lat) &&
        p.lon < (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon) {
      inside = !inside;
    }
  }
  return inside;
}

// Number of points within radius_m of center, e.g. land-use parcels or
// check-in venues around a trip destination.
inline std::size_t count_within_radius(const std::vector<LatLon>& points, const LatLon& center,
                                       double radius_m) {
  return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [&](const LatLon& p) {
    return haversine_m(p, center) <= radius_m;
  }));
}

// ---------------------------------------------------------------------------
// Time

// Days since 1970-01-01 of a proleptic Gregorian date.
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

// "YYYY-MM-DDTHH:MM:SS" (or a space separator); no time zone handling.
inline std::optional<std::int64_t> parse_iso_datetime(std::string_view s) {
  while (!s.empty() && (s.back() == 'Z' || s.back() == ' ')) s.remove_suffix(1);
  if (s.size() != 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':') {
    return std::nullopt;
  }
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    const auto* b = s.data() + pos;
    auto [p, ec] = std::from_chars(b, b + len, out);
    return ec == std::errc() && p == b + len;
  };
  int y, mo, d, h, mi, se;
  if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d) || !num(11, 2, h) || !num(14, 2, mi) ||
      !num(17, 2, se)) {
    return std::nullopt;
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 59) return std::nullopt;
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
         h * 3600 + mi * 60 + se;
}

inline std::string format_iso_datetime(std::int64_t epoch) {
  const std::int64_t days = floor_div(epoch, 86400);
  const std::int64_t sod = epoch - days * 86400;
  // civil_from_days
  const std::int64_t z = days + 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld",
                static_cast<long long>(y), m, d, static_cast<long long>(sod / 3600),
                static_cast<long long>((sod / 60) % 60), static_cast<long long>(sod % 60));
  return buf;
}

// Monday = 0 ... Sunday = 6.
inline std::size_t day_of_week(std::int64_t epoch) {
  const std::int64_t days = floor_div(epoch, 86400);
  return static_cast<std::size_t>(((days + 3) % 7 + 7) % 7);
}

struct CyclicTime {
  double sin_time;
  double cos_time;
};

inline CyclicTime transform_time(double seconds) {
  if (!(seconds >= 0.0 && seconds < kSecondsPerDay)) {
    throw ContractError("seconds after midnight must lie in [0, 86400), got " +
                        std::to_string(seconds));
  }
  const double angle = 2.0 * std::numbers::pi * seconds / kSecondsPerDay;
  return {std::sin(angle), std::cos(angle)};
}

// ---------------------------------------------------------------------------
// GPS streams and trip breaking

struct GpsPoint {
  std::int64_t epoch_seconds = 0;  // absolute, for ordering
  double latitude = 0.0;
  double longitude = 0.0;

  double seconds_of_day() const {
    return static_cast<double>(epoch_seconds - floor_div(epoch_seconds, 86400) * 86400);
  }
  LatLon position() const { return {latitude, longitude}; }
  friend bool operator==(const GpsPoint&, const GpsPoint&) = default;
};

struct RawStream {
  std::string respondent_id;
  std::vector<GpsPoint> points;
};

struct Station {
  std::string name;
  LatLon position;
};

struct StationIndex {
  std::vector<Station> metro;
  std::vector<Station> bus_junctions;
  // Unordered station pair -> maximum metro travel time in seconds.
  std::map<std::pair<std::string, std::string>, double> metro_max_seconds;

  std::optional<double> metro_time(const std::string& a, const std::string& b) const {
    auto it = metro_max_seconds.find(std::minmax(a, b));
    if (it == metro_max_seconds.end()) return std::nullopt;
    return it->second;
  }
  bool empty() const { return metro.empty() && bus_junctions.empty(); }
};

struct TripRules {
  double dwell_seconds = 180.0;
  double metro_radius_m = 300.0;
  double bus_radius_m = 100.0;
  double bus_gap_seconds = 600.0;
};

struct TripBreakResult {
  std::vector<std::vector<GpsPoint>> trips;
  std::size_t metro_stitches = 0;
  std::size_t bus_stitches = 0;
};

namespace detail {

inline std::vector<const Station*> near(const std::vector<Station>& stations, const LatLon& p,
                                        double radius) {
  std::vector<const Station*> out;
  for (const auto& s : stations)
    if (haversine_m(s.position, p) <= radius) out.push_back(&s);
  return out;
}

}  // namespace detail

enum class Stitch { none, metro, bus };

// Whether a gap longer than the dwell threshold between two consecutive
// points still belongs to one trip.
inline Stitch stitch_rule(const GpsPoint& a, const GpsPoint& b, const StationIndex& idx,
                          const TripRules& rules) {
  const double gap = static_cast<double>(b.epoch_seconds - a.epoch_seconds);
  for (const Station* sa : detail::near(idx.metro, a.position(), rules.metro_radius_m)) {
    for (const Station* sb : detail::near(idx.metro, b.position(), rules.metro_radius_m)) {
      if (sa->name == sb->name) continue;
      const auto limit = idx.metro_time(sa->name, sb->name);
      if (limit && gap <= *limit) return Stitch::metro;
    }
  }
  if (gap <= rules.bus_gap_seconds) {
    for (const auto& j : idx.bus_junctions) {
      if (haversine_m(j.position, a.position()) <= rules.bus_radius_m &&
          haversine_m(j.position, b.position()) <= rules.bus_radius_m) {
        return Stitch::bus;
      }
    }
  }
  return Stitch::none;
}

inline TripBreakResult break_trips(const std::vector<GpsPoint>& stream,
                                   const StationIndex* idx = nullptr,
                                   const TripRules& rules = {}) {
  TripBreakResult res;
  if (stream.empty()) return res;
  res.trips.push_back({stream.front()});
  for (std::size_t i = 1; i < stream.size(); ++i) {
    const auto& prev = stream[i - 1];
    const auto& cur = stream[i];
    if (cur.epoch_seconds < prev.epoch_seconds) {
      throw ContractError("GPS stream not ordered at point " + std::to_string(i));
    }
    const double gap = static_cast<double>(cur.epoch_seconds - prev.epoch_seconds);
    if (gap > rules.dwell_seconds) {
      const Stitch s = idx ? stitch_rule(prev, cur, *idx, rules) : Stitch::none;
      if (s == Stitch::none) {
        res.trips.push_back({cur});
        continue;
      }
      ++(s == Stitch::metro ? res.metro_stitches : res.bus_stitches);
    }
    res.trips.back().push_back(cur);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Fixed-length resampling

// Position channels of point i in the given frame:
//   absolute    longitude, latitude in degrees
//   step_delta  east/north metres from the previous fix of the raw trace
//               (zero for the first fix)
//   origin_km   east/north kilometres from the trip's first fix
inline std::pair<double, double> frame_position(const std::vector<GpsPoint>& points, std::size_t i,
                                                const std::string& frame) {
  if (frame == "absolute") return {points[i].longitude, points[i].latitude};
  if (frame == "step_delta") {
    if (i == 0) return {0.0, 0.0};
    return local_offset_m(points[i - 1].position(), points[i].position());
  }
  if (frame == "origin_km") {
    auto off = local_offset_m(points[0].position(), points[i].position());
    return {off.first / 1000.0, off.second / 1000.0};
  }
  throw ContractError("unknown coordinate frame '" + frame + "'");
}

// First and last half of the sequence length when the trip is longer; all
// points plus zero padding when shorter. Channels: sin time, cos time, then
// the two position channels of `frame`. Positions are computed on the full
// trace before points are dropped. Returns nullopt below min_points.
inline std::optional<Trajectory> resample(const std::vector<GpsPoint>& points,
                                          std::size_t min_points = 15,
                                          std::size_t length = kSequenceLength,
                                          const std::string& frame = "absolute") {
  if (points.size() < min_points || points.empty()) return std::nullopt;
  std::vector<std::size_t> keep;
  const std::size_t n = points.size();
  if (n > length) {
    const std::size_t head = length / 2;
    const std::size_t tail = length - head;
    for (std::size_t i = 0; i < head; ++i) keep.push_back(i);
    for (std::size_t i = n - tail; i < n; ++i) keep.push_back(i);
  } else {
    for (std::size_t i = 0; i < n; ++i) keep.push_back(i);
  }
  Trajectory tr;
  tr.steps.assign(length, StepFeatures{});
  tr.length = keep.size();
  for (std::size_t t = 0; t < keep.size(); ++t) {
    const auto ct = transform_time(points[keep[t]].seconds_of_day());
    const auto [x, y] = frame_position(points, keep[t], frame);
    tr.steps[t] = {ct.sin_time, ct.cos_time, x, y};
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Delimited text input

namespace detail {

inline std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

inline std::vector<std::string> split_fields(std::string_view line, char delim = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line,
                           std::size_t col, const char* what) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ParseError(file, line, col, std::string("malformed ") + what + " '" + s + "'");
  }
  return v;
}

// Calls fn(line_number, fields) for each non-empty data line after the header.
inline std::vector<std::string> read_delimited(
    const std::filesystem::path& path,
    const std::function<void(std::size_t, const std::vector<std::string>&)>& fn) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (header.empty()) {
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size()) {
      throw ParseError(path.string(), lineno, std::min(fields.size(), header.size()) + 1,
                       "expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()));
    }
    fn(lineno, fields);
  }
  return header;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

// respondent_id, datetime, latitude, longitude (header line first). Points
// keep file order; a respondent's stream must be time ordered.
inline std::vector<RawStream> read_gps_csv(const std::filesystem::path& path) {
  std::vector<RawStream> streams;
  std::map<std::string, std::size_t> index;
  const std::string file = path.string();
  detail::read_delimited(path, [&](std::size_t line, const std::vector<std::string>& f) {
    if (f.size() < 4) throw ParseError(file, line, f.size() + 1, "expected 4 fields");
    const auto when = parse_iso_datetime(f[1]);
    if (!when) throw ParseError(file, line, 2, "malformed datetime '" + f[1] + "'");
    GpsPoint p{*when, detail::parse_double(f[2], file, line, 3, "latitude"),
               detail::parse_double(f[3], file, line, 4, "longitude")};
    if (p.latitude < -90 || p.latitude > 90) throw ParseError(file, line, 3, "latitude out of range");
    if (p.longitude < -180 || p.longitude > 180) {
      throw ParseError(file, line, 4, "longitude out of range");
    }
    auto [it, fresh] = index.try_emplace(f[0], streams.size());
    if (fresh) streams.push_back({f[0], {}});
    streams[it->second].points.push_back(p);
  });
  return streams;
}

inline void write_gps_csv(const std::vector<RawStream>& streams, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << "respondent_id,datetime,latitude,longitude\n";
  for (const auto& s : streams) {
    for (const auto& p : s.points) {
      out << s.respondent_id << ',' << format_iso_datetime(p.epoch_seconds) << ','
          << detail::format_double(p.latitude) << ',' << detail::format_double(p.longitude)
          << '\n';
    }
  }
}

// name, latitude, longitude, kind (metro | bus), plus an optional travel-time
// file of station_a, station_b, max_seconds.
inline StationIndex read_station_index(const std::filesystem::path& stations,
                                       const std::optional<std::filesystem::path>& metro_times) {
  StationIndex idx;
  const std::string file = stations.string();
  detail::read_delimited(stations, [&](std::size_t line, const std::vector<std::string>& f) {
    if (f.size() < 4) throw ParseError(file, line, f.size() + 1, "expected 4 fields");
    Station s{f[0], {detail::parse_double(f[1], file, line, 2, "latitude"),
                     detail::parse_double(f[2], file, line, 3, "longitude")}};
    if (f[3] == "metro") {
      idx.metro.push_back(std::move(s));
    } else if (f[3] == "bus") {
      idx.bus_junctions.push_back(std::move(s));
    } else {
      throw ParseError(file, line, 4, "station kind must be 'metro' or 'bus', got '" + f[3] + "'");
    }
  });
  if (metro_times) {
    const std::string tfile = metro_times->string();
    detail::read_delimited(*metro_times, [&](std::size_t line, const std::vector<std::string>& f) {
      if (f.size() < 3) throw ParseError(tfile, line, f.size() + 1, "expected 3 fields");
      idx.metro_max_seconds[std::minmax(f[0], f[1])] =
          detail::parse_double(f[2], tfile, line, 3, "travel time");
    });
  }
  return idx;
}

// trip_id -> column -> raw text
using AuxRow = std::map<std::string, std::string>;
using AuxTable = std::map<std::string, AuxRow>;

inline AuxTable read_aux_csv(const std::filesystem::path& path) {
  AuxTable table;
  std::vector<std::string> header;
  const std::string file = path.string();
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
  header = detail::read_delimited(path, [&](std::size_t line, const std::vector<std::string>& f) {
    rows.push_back(f);
    lines.push_back(line);
  });
  const auto id_col = std::find(header.begin(), header.end(), "trip_id");
  if (id_col == header.end()) throw ParseError(file, 1, 1, "missing trip_id column");
  const std::size_t id = static_cast<std::size_t>(id_col - header.begin());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    AuxRow row;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c != id) row[header[c]] = rows[r][c];
    }
    if (!table.emplace(rows[r][id], std::move(row)).second) {
      throw ParseError(file, lines[r], id + 1, "duplicate trip_id '" + rows[r][id] + "'");
    }
  }
  return table;
}

inline void write_aux_csv(const AuxTable& table, const std::filesystem::path& path) {
  std::set<std::string> columns;
  for (const auto& [id, row] : table)
    for (const auto& [k, v] : row) columns.insert(k);
  std::ofstream out(path, std::ios::binary);
  out << "trip_id";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const auto& [id, row] : table) {
    out << id;
    for (const auto& c : columns) {
      auto it = row.find(c);
      out << ',' << (it == row.end() ? "" : it->second);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Record building

struct PipelineConfig {
  std::size_t min_points = 15;
  TripRules rules;
  std::string coordinate_frame = "step_delta";  // step_delta | origin_km | absolute
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 1;
  // Optional region polygons; when empty the flag is read from the aux table.
  std::vector<LatLon> cbd_polygon;
  std::vector<LatLon> island_polygon;
  DatasetSchema schema;
};

// Rough outlines; override in the run configuration for real studies.
inline std::vector<LatLon> approximate_montreal_cbd() {
  return {{45.4950, -73.5800}, {45.5120, -73.5800}, {45.5120, -73.5500}, {45.4950, -73.5500}};
}
inline std::vector<LatLon> approximate_montreal_island() {
  return {{45.4100, -73.9700}, {45.5000, -73.9700}, {45.7050, -73.4750},
          {45.6950, -73.4700}, {45.5300, -73.5100}, {45.4200, -73.6500}};
}

struct RawTrip {
  std::string trip_id;
  std::string respondent_id;
  std::vector<GpsPoint> points;
};

// Trip ids are "<respondent>_<k>" with k counting from 1.
inline std::vector<RawTrip> detect_trips(const std::vector<RawStream>& streams,
                                         const StationIndex* idx, const TripRules& rules,
                                         Json* counts = nullptr) {
  std::vector<RawTrip> trips;
  std::size_t metro = 0, bus = 0;
  for (const auto& s : streams) {
    auto res = break_trips(s.points, idx, rules);
    metro += res.metro_stitches;
    bus += res.bus_stitches;
    for (std::size_t k = 0; k < res.trips.size(); ++k) {
      trips.push_back({s.respondent_id + "_" + std::to_string(k + 1), s.respondent_id,
                       std::move(res.trips[k])});
    }
  }
  if (counts) {
    (*counts)["trips_detected"] = trips.size();
    (*counts)["metro_stitches"] = metro;
    (*counts)["bus_stitches"] = bus;
  }
  return trips;
}

namespace detail {

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "na"; }

inline std::optional<std::size_t> parse_label(const std::string& raw,
                                              const std::vector<std::string>& vocab,
                                              const std::string& trip, const char* what) {
  if (is_missing(raw)) return std::nullopt;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == raw) return i;
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec == std::errc() && p == raw.data() + raw.size() && v < vocab.size()) return v;
  throw IngestionError("trip " + trip + ": unknown " + what + " label '" + raw + "'");
}

inline const std::string* aux_value(const AuxRow& row, const std::string& key) {
  auto it = row.find(key);
  return it == row.end() ? nullptr : &it->second;
}

inline std::optional<LatLon> aux_location(const AuxRow& row, const std::string& prefix) {
  const auto* lat = aux_value(row, prefix + "_LAT");
  const auto* lon = aux_value(row, prefix + "_LON");
  if (!lat || !lon || is_missing(*lat) || is_missing(*lon)) return std::nullopt;
  return LatLon{std::stod(*lat), std::stod(*lon)};
}

inline std::string joint_key(const TripRecord& r) {
  return (r.mode ? std::to_string(*r.mode) : "-") + "/" +
         (r.purpose ? std::to_string(*r.purpose) : "-");
}

}  // namespace detail

// Stratified by the joint (mode, purpose) label, seeded.
inline void assign_split(std::vector<TripRecord>& records, double test_fraction,
                         std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ContractError("test fraction must lie in [0, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) strata[detail::joint_key(records[i])].push_back(i);
  for (auto& [key, members] : strata) {
    Rng rng(hash_combine(seed, hash_string(key)));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) {
      records[members[k]].split = k < n_test ? "test" : "train";
    }
  }
}

namespace detail {

inline ColumnStats stats_of(const std::vector<double>& xs) {
  if (xs.empty()) return {};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  const double sd = std::sqrt(var);
  return {mean, sd > 1e-12 ? sd : 1.0};
}

}  // namespace detail

// Standardizes numeric columns and trajectory coordinates in place using
// statistics of the train split. Missing numeric values (NaN) become the
// train mean, i.e. 0 after standardization.
inline NormalizationStats standardize(std::vector<TripRecord>& records, std::size_t numeric_cols) {
  NormalizationStats stats;
  std::vector<std::vector<double>> cols(numeric_cols);
  std::array<std::vector<double>, 2> coords;
  for (const auto& r : records) {
    if (r.split != "train") continue;
    for (std::size_t c = 0; c < numeric_cols; ++c)
      if (!std::isnan(r.numeric[c])) cols[c].push_back(r.numeric[c]);
    for (std::size_t t = 0; t < r.trajectory.length; ++t) {
      coords[0].push_back(r.trajectory.steps[t][2]);
      coords[1].push_back(r.trajectory.steps[t][3]);
    }
  }
  for (const auto& c : cols) stats.numeric.push_back(detail::stats_of(c));
  stats.coordinates = {detail::stats_of(coords[0]), detail::stats_of(coords[1])};
  for (auto& r : records) {
    for (std::size_t c = 0; c < numeric_cols; ++c) {
      double& v = r.numeric[c];
      v = std::isnan(v) ? 0.0 : (v - stats.numeric[c].mean) / stats.numeric[c].stddev;
    }
    for (std::size_t t = 0; t < r.trajectory.length; ++t) {
      for (std::size_t k = 0; k < 2; ++k) {
        double& v = r.trajectory.steps[t][2 + k];
        v = (v - stats.coordinates[k].mean) / stats.coordinates[k].stddev;
      }
    }
  }
  return stats;
}

// Categorical code for one schema attribute; derived attributes come from
// the trip itself, the rest from the aux row.
inline std::size_t categorical_code(const EmbeddingAttribute& attr, const RawTrip& trip,
                                    const AuxRow& row, const PipelineConfig& cfg) {
  const auto& first = trip.points.front();
  const auto& last = trip.points.back();
  std::optional<std::size_t> code;
  auto flag = [&](const std::vector<LatLon>& poly, const GpsPoint& p) -> std::optional<std::size_t> {
    if (poly.empty()) return std::nullopt;
    return point_in_polygon(p.position(), poly) ? 1 : 0;
  };
  if (attr.name == "DAY_OF_WEEK") {
    code = day_of_week(first.epoch_seconds);
  } else if (attr.name == "HOUR_START") {
    code = static_cast<std::size_t>(first.seconds_of_day() / 3600.0);
  } else if (attr.name == "HOUR_END") {
    code = static_cast<std::size_t>(last.seconds_of_day() / 3600.0);
  } else if (attr.name == "CBD_ORIGIN") {
    code = flag(cfg.cbd_polygon, first);
  } else if (attr.name == "CBD_DESTIN") {
    code = flag(cfg.cbd_polygon, last);
  } else if (attr.name == "MTL_ORIGIN") {
    code = flag(cfg.island_polygon, first);
  } else if (attr.name == "MTL_DESTIN") {
    code = flag(cfg.island_polygon, last);
  }
  if (!code) {
    const auto* raw = detail::aux_value(row, attr.name);
    if (!raw || detail::is_missing(*raw)) return attr.missing_code();
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc() || p != raw->data() + raw->size()) {
      throw IngestionError("trip " + trip.trip_id + ": non-integer code '" + *raw +
                           "' for attribute '" + attr.name + "'");
    }
    code = v;
  }
  if (*code >= attr.levels) throw CategoricalDomainError(attr.name, *code, attr.levels);
  return *code;
}

inline double numeric_value(const std::string& column, const RawTrip& trip, const AuxRow& row) {
  static const std::map<std::string, std::pair<std::string, bool>> distance_columns = {
      {"HOME_DEST", {"HOME", true}},  {"STUDY_DEST", {"STUDY", true}},
      {"WORK_DEST", {"WORK", true}},  {"HOME_ORG", {"HOME", false}},
      {"STUDY_ORG", {"STUDY", false}}, {"WORK_ORG", {"WORK", false}}};
  if (auto it = distance_columns.find(column); it != distance_columns.end()) {
    if (auto anchor = detail::aux_location(row, it->second.first)) {
      const auto& p = it->second.second ? trip.points.back() : trip.points.front();
      return haversine_m(*anchor, p.position());
    }
  }
  const auto* raw = detail::aux_value(row, column);
  if (!raw || detail::is_missing(*raw)) return std::nan("");
  double v = 0.0;
  auto [p, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
  if (ec != std::errc() || p != raw->data() + raw->size()) {
    throw IngestionError("trip " + trip.trip_id + ": non-numeric value '" + *raw +
                         "' in column '" + column + "'");
  }
  return v;
}

// Joins trips with their aux rows, encodes features, splits and
// standardizes. Aux rows naming an unknown trip are an error; trips without
// an aux row or with too few points are dropped and counted.
inline Dataset build_records(const std::vector<RawTrip>& trips, const AuxTable& aux,
                             const PipelineConfig& cfg, Json counts = Json::object()) {
  std::set<std::string> known;
  for (const auto& t : trips) known.insert(t.trip_id);
  for (const auto& [id, row] : aux) {
    if (!known.contains(id)) throw IngestionError("aux row references unknown trip id '" + id + "'");
  }
  Dataset ds;
  ds.schema = cfg.schema;
  ds.schema.coordinate_frame = cfg.coordinate_frame;
  std::size_t too_short = 0, no_aux = 0;
  for (const auto& trip : trips) {
    auto it = aux.find(trip.trip_id);
    if (it == aux.end()) {
      ++no_aux;
      continue;
    }
    auto tr = resample(trip.points, cfg.min_points, ds.schema.sequence_length, cfg.coordinate_frame);
    if (!tr) {
      ++too_short;
      continue;
    }
    TripRecord r;
    r.trip_id = trip.trip_id;
    r.trajectory = std::move(*tr);
    for (const auto& attr : ds.schema.categorical.attributes()) {
      r.categorical.push_back(categorical_code(attr, trip, it->second, cfg));
    }
    for (const auto& col : ds.schema.numeric_columns) {
      r.numeric.push_back(numeric_value(col, trip, it->second));
    }
    const AuxRow& row = it->second;
    if (const auto* m = detail::aux_value(row, "MODE")) {
      r.mode = detail::parse_label(*m, ds.schema.mode_labels, trip.trip_id, "mode");
    }
    if (const auto* p = detail::aux_value(row, "PURPOSE")) {
      r.purpose = detail::parse_label(*p, ds.schema.purpose_labels, trip.trip_id, "purpose");
    }
    ds.records.push_back(std::move(r));
  }
  if (std::abs(cfg.train_fraction + cfg.test_fraction - 1.0) > 1e-9) {
    throw ContractError("split fractions must sum to 1");
  }
  assign_split(ds.records, cfg.test_fraction, cfg.split_seed);
  ds.stats = standardize(ds.records, ds.schema.numeric_columns.size());

  std::size_t both = 0, mode_only = 0, purpose_only = 0, unlabeled = 0, train = 0;
  for (const auto& r : ds.records) {
    if (r.has_both_labels()) ++both;
    else if (r.mode) ++mode_only;
    else if (r.purpose) ++purpose_only;
    else ++unlabeled;
    if (r.split == "train") ++train;
  }
  counts["filtered_short"] = too_short;
  counts["missing_aux"] = no_aux;
  counts["records"] = ds.records.size();
  counts["labeled_both"] = both;
  counts["mode_only"] = mode_only;
  counts["purpose_only"] = purpose_only;
  counts["unlabeled"] = unlabeled;
  counts["train"] = train;
  counts["test"] = ds.records.size() - train;
  counts["split_seed"] = cfg.split_seed;
  counts["test_fraction"] = cfg.test_fraction;
  ds.provenance = std::move(counts);
  return ds;
}

}  // namespace tripnet
