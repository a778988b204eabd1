// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Seeded synthetic travel-survey generator.
//
// Respondents own three anchors (home, work, study) 3-8 km apart. Each trip
// draws a purpose uniformly; with probability rho its mode is the purpose's
// preferred mode, otherwise a uniform draw. Generative rules:
//
//   mode     speed (m/s)      path
//   walk     1.0-1.5 ±10%     heading random walk, sd 0.4 rad per step
//   bike     3.5-5.5 ±10%     heading random walk, sd 0.15 rad
//   car      11-16 ±5%        axis-aligned grid, turns with p = 0.08
//   transit  8-11 ±5%         near-straight, 3-5 step dwells every 8-12 steps
//
//   purpose      destination                       start hour
//   education    within 100 m of study anchor      7-9
//   health       >= 1.5 km from anchors, LU_2 high  9-16
//   return_home  within 100 m of home anchor       16-20
//   shopping     >= 1.5 km from anchors, LU_1 high  10-19
//   work         within 100 m of work anchor       6-9
//   other        >= 1.5 km from anchors             0-22
//
// Points are 10-15 s apart (integer seconds) with ±1 m uniform position
// noise per axis; trips have 20-150 points. synth_oracle recovers both
// labels from the raw output alone.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tripnet/pipeline.hpp"
#include "tripnet/records.hpp"
#include "tripnet/rng.hpp"

namespace tripnet {

struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t n = 2000;
  double rho = 0.8;
  std::size_t trips_per_respondent = 10;
  LatLon center{45.5017, -73.5673};
};

inline Json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"n", c.n},
          {"rho", c.rho},
          {"trips_per_respondent", c.trips_per_respondent},
          {"center", {c.center.lat, c.center.lon}}};
}

struct SynthTruth {
  std::string trip_id;
  std::size_t mode = 0;
  std::size_t purpose = 0;
};

struct SynthOutput {
  std::vector<RawStream> streams;
  AuxTable aux;
  std::vector<SynthTruth> truth;
};

namespace synth {

enum Mode : std::size_t { walk = 0, bike = 1, car = 2, transit = 3 };
enum Purpose : std::size_t { education = 0, health = 1, return_home = 2, shopping = 3, work = 4, other = 5 };

inline constexpr std::size_t kPreferredMode[6] = {bike, car, transit, walk, car, bike};
inline constexpr int kHourRange[6][2] = {{7, 9}, {9, 16}, {16, 20}, {10, 19}, {6, 9}, {0, 22}};
// 2016-09-05, a Monday.
inline constexpr std::int64_t kBaseDay = 17049;

struct Respondent {
  std::string id;
  LatLon home, work, study;
  std::size_t sex, occupation, age;
  double avg_price;
};

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}
inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline LatLon in_disc(Rng& rng, const LatLon& c, double radius) {
  const double r = radius * std::sqrt(uniform(rng, 0.0, 1.0));
  const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return offset_point(c, r * std::cos(a), r * std::sin(a));
}

inline LatLon at_distance(Rng& rng, const LatLon& c, double lo, double hi) {
  const double r = uniform(rng, lo, hi);
  const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return offset_point(c, r * std::cos(a), r * std::sin(a));
}

inline Respondent make_respondent(const SynthConfig& cfg, std::size_t index) {
  Rng rng(hash_combine(hash_combine(cfg.seed, hash_string("respondent")), index));
  Respondent r;
  char id[32];
  std::snprintf(id, sizeof id, "R%04zu", index + 1);
  r.id = id;
  r.home = in_disc(rng, cfg.center, 6000.0);
  r.work = at_distance(rng, r.home, 3000.0, 8000.0);
  do {
    r.study = at_distance(rng, r.home, 3000.0, 8000.0);
  } while (haversine_m(r.study, r.work) < 3000.0);
  r.sex = pick(rng, 0, 2);
  r.occupation = pick(rng, 0, 5);
  r.age = pick(rng, 0, 5);
  r.avg_price = std::round(uniform(rng, 150000.0, 900000.0));
  return r;
}

inline std::string fmt(double v) { return detail::format_double(v); }

// Per-step displacements in metres (east, north) for the given mode.
inline std::vector<std::pair<double, double>> displacements(Rng& rng, std::size_t mode,
                                                            const std::vector<int>& dt) {
  std::vector<std::pair<double, double>> d;
  double heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  double base = 0.0, jitter = 0.1;
  switch (mode) {
    case walk: base = uniform(rng, 1.0, 1.5); break;
    case bike: base = uniform(rng, 3.5, 5.5); break;
    case car:
      base = uniform(rng, 11.0, 16.0);
      jitter = 0.05;
      heading = static_cast<double>(pick(rng, 0, 3)) * std::numbers::pi / 2.0;
      break;
    default:
      base = uniform(rng, 8.0, 11.0);
      jitter = 0.05;
      break;
  }
  std::normal_distribution<double> turn(0.0, mode == walk ? 0.4 : mode == bike ? 0.15 : 0.05);
  std::size_t run = pick(rng, 8, 12), dwell = 0;
  for (int step : dt) {
    if (mode == transit) {
      if (dwell > 0) {
        --dwell;
        d.emplace_back(0.0, 0.0);
        if (dwell == 0) run = pick(rng, 8, 12);
        continue;
      }
      if (run == 0) {
        dwell = pick(rng, 3, 5) - 1;
        d.emplace_back(0.0, 0.0);
        if (dwell == 0) run = pick(rng, 8, 12);
        continue;
      }
      --run;
    }
    if (mode == car) {
      if (uniform(rng, 0.0, 1.0) < 0.08) heading += (pick(rng, 0, 1) ? 1.0 : -1.0) * std::numbers::pi / 2.0;
    } else {
      heading += turn(rng);
    }
    const double speed = base * uniform(rng, 1.0 - jitter, 1.0 + jitter);
    const double dist = speed * step;
    d.emplace_back(dist * std::cos(heading), dist * std::sin(heading));
  }
  return d;
}

}  // namespace synth

// Raw streams plus the aux table, in the ingestion formats.
inline SynthOutput synth_raw(const SynthConfig& cfg) {
  if (cfg.n < 1) throw ContractError("synthetic dataset needs n >= 1");
  if (cfg.rho < 0.0 || cfg.rho > 1.0) throw ContractError("rho must lie in [0, 1]");
  if (cfg.trips_per_respondent < 1) throw ContractError("trips per respondent must be >= 1");
  using namespace synth;
  SynthOutput out;
  const auto modes = default_mode_labels();
  const auto purposes = default_purpose_labels();
  const std::size_t respondents = (cfg.n + cfg.trips_per_respondent - 1) / cfg.trips_per_respondent;
  std::size_t trip_index = 0;
  for (std::size_t ri = 0; ri < respondents; ++ri) {
    const Respondent resp = make_respondent(cfg, ri);
    RawStream stream{resp.id, {}};
    for (std::size_t k = 0; k < cfg.trips_per_respondent && trip_index < cfg.n; ++k, ++trip_index) {
      Rng rng(hash_combine(hash_combine(cfg.seed, hash_string("trip")), trip_index));
      const std::size_t purpose = pick(rng, 0, 5);
      const std::size_t mode = uniform(rng, 0.0, 1.0) < cfg.rho ? kPreferredMode[purpose] : pick(rng, 0, 3);

      LatLon dest;
      switch (purpose) {
        case education: dest = in_disc(rng, resp.study, 100.0); break;
        case return_home: dest = in_disc(rng, resp.home, 100.0); break;
        case work: dest = in_disc(rng, resp.work, 100.0); break;
        default:
          do {
            dest = in_disc(rng, cfg.center, 8000.0);
          } while (haversine_m(dest, resp.home) < 1500.0 || haversine_m(dest, resp.work) < 1500.0 ||
                   haversine_m(dest, resp.study) < 1500.0);
      }

      const std::size_t npts = pick(rng, 20, 150);
      std::vector<int> dt(npts - 1);
      for (int& s : dt) s = static_cast<int>(pick(rng, 10, 15));
      const auto disp = displacements(rng, mode, dt);
      double total_e = 0.0, total_n = 0.0;
      for (const auto& [e, n] : disp) {
        total_e += e;
        total_n += n;
      }
      const std::int64_t day = kBaseDay + 7 * static_cast<std::int64_t>(k) +
                               static_cast<std::int64_t>(pick(rng, 0, 6));
      const int hour = static_cast<int>(pick(rng, kHourRange[purpose][0], kHourRange[purpose][1]));
      std::int64_t when = day * 86400 + hour * 3600 + static_cast<std::int64_t>(pick(rng, 0, 3599));
      // Positions relative to the destination so the last point lands on it.
      double e = -total_e, n = -total_n;
      for (std::size_t i = 0; i < npts; ++i) {
        if (i > 0) {
          e += disp[i - 1].first;
          n += disp[i - 1].second;
          when += dt[i - 1];
        }
        const LatLon p = offset_point(dest, e + uniform(rng, -1.0, 1.0), n + uniform(rng, -1.0, 1.0));
        stream.points.push_back({when, p.lat, p.lon});
      }
      const GpsPoint& first = stream.points[stream.points.size() - npts];
      const GpsPoint& last = stream.points.back();

      const std::string trip_id = resp.id + "_" + std::to_string(k + 1);
      AuxRow row;
      row["HOME_LAT"] = fmt(resp.home.lat);
      row["HOME_LON"] = fmt(resp.home.lon);
      row["WORK_LAT"] = fmt(resp.work.lat);
      row["WORK_LON"] = fmt(resp.work.lon);
      row["STUDY_LAT"] = fmt(resp.study.lat);
      row["STUDY_LON"] = fmt(resp.study.lon);
      row["SEX"] = std::to_string(resp.sex);
      row["OCCUPATION"] = std::to_string(resp.occupation);
      row["AGE"] = std::to_string(resp.age);
      row["AVG_PRICE_NEIGH"] = fmt(resp.avg_price);
      const auto cbd = approximate_montreal_cbd();
      const auto island = approximate_montreal_island();
      row["CBD_ORIGIN"] = point_in_polygon(first.position(), cbd) ? "1" : "0";
      row["CBD_DESTIN"] = point_in_polygon(last.position(), cbd) ? "1" : "0";
      row["MTL_ORIGIN"] = point_in_polygon(first.position(), island) ? "1" : "0";
      row["MTL_DESTIN"] = point_in_polygon(last.position(), island) ? "1" : "0";
      for (int lu = 1; lu <= 23; ++lu) {
        std::size_t v = pick(rng, 0, 6);
        if ((lu == 1 && purpose == shopping) || (lu == 2 && purpose == health)) v = pick(rng, 10, 25);
        row["LU_" + std::to_string(lu)] = std::to_string(v);
      }
      for (int c = 1; c <= 10; ++c) {
        std::size_t v = pick(rng, 0, 40);
        if (c == 1 && purpose == shopping) v += pick(rng, 20, 60);
        row["CH_" + std::to_string(c)] = std::to_string(v);
        row["UC_" + std::to_string(c)] = std::to_string(pick(rng, 0, 30));
      }
      row["MODE"] = modes[mode];
      row["PURPOSE"] = purposes[purpose];
      out.aux.emplace(trip_id, std::move(row));
      out.truth.push_back({trip_id, mode, purpose});
    }
    out.streams.push_back(std::move(stream));
  }
  return out;
}

struct OracleLabels {
  std::size_t mode = 0;
  std::size_t purpose = 0;
};

// Recovers both labels from a generated trip and its aux row using the
// generative thresholds: any near-stationary step means transit, otherwise
// the median step speed separates walk (< 2.5 m/s), bike (< 7) and car;
// destinations within 200 m of an anchor name their purpose, otherwise the
// land-use columns decide.
inline OracleLabels synth_oracle(const RawTrip& trip, const AuxRow& row) {
  using namespace synth;
  OracleLabels out;
  std::vector<double> speeds;
  for (std::size_t i = 1; i < trip.points.size(); ++i) {
    const auto& a = trip.points[i - 1];
    const auto& b = trip.points[i];
    speeds.push_back(haversine_m(a.position(), b.position()) /
                     static_cast<double>(b.epoch_seconds - a.epoch_seconds));
  }
  if (std::any_of(speeds.begin(), speeds.end(), [](double s) { return s < 0.5; })) {
    out.mode = transit;
  } else {
    std::sort(speeds.begin(), speeds.end());
    const double median = speeds[speeds.size() / 2];
    out.mode = median < 2.5 ? walk : median < 7.0 ? bike : car;
  }
  const double work_d = numeric_value("WORK_DEST", trip, row);
  const double study_d = numeric_value("STUDY_DEST", trip, row);
  const double home_d = numeric_value("HOME_DEST", trip, row);
  if (work_d < 200.0) out.purpose = work;
  else if (study_d < 200.0) out.purpose = education;
  else if (home_d < 200.0) out.purpose = return_home;
  else if (numeric_value("LU_1", trip, row) >= 10.0) out.purpose = shopping;
  else if (numeric_value("LU_2", trip, row) >= 10.0) out.purpose = health;
  else out.purpose = other;
  return out;
}

// Generates and preprocesses a synthetic dataset with the regular pipeline.
inline Dataset synth_generate(const SynthConfig& cfg, PipelineConfig pipe = {}) {
  const SynthOutput raw = synth_raw(cfg);
  Json counts = Json::object();
  const auto trips = detect_trips(raw.streams, nullptr, pipe.rules, &counts);
  pipe.split_seed = cfg.seed;
  Dataset ds = build_records(trips, raw.aux, pipe, counts);
  ds.provenance["generator"] = to_json(cfg);
  return ds;
}

}  // namespace tripnet
