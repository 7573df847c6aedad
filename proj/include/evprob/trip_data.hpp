#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evprob/csv.hpp"
#include "evprob/error.hpp"
#include "evprob/rng.hpp"

namespace evprob {

inline constexpr double kJoulesPerKwh = 3.6e6;

/// One second of a recorded trip. Samples are spaced at exactly 1 s.
struct TripSample {
  double speed = 0.0;            // m/s, >= 0
  double acceleration = 0.0;     // m/s^2
  double elevation_delta = 0.0;  // m, change since previous second
  double distance_delta = 0.0;   // m, >= 0
  double power = 0.0;            // W, negative = regeneration
  double temperature = 0.0;      // degrees F

  friend bool operator==(const TripSample&, const TripSample&) = default;
};

struct TripTrace {
  std::string trip_id;
  std::vector<TripSample> samples;
};

/// Contiguous slice of a TripTrace. `samples` views the source trace, which
/// must outlive the micro-trip.
struct MicroTrip {
  std::string source_trip_id;
  std::size_t start_index = 0;
  std::size_t length = 0;
  std::span<const TripSample> samples;
};

struct LengthBounds {
  std::size_t min_length = 60;
  std::size_t max_length = 0;  // 0 = up to the full trace length
};

inline const std::vector<std::string>& trace_csv_columns() {
  static const std::vector<std::string> columns{
      "trip_id", "t_sec", "speed_mps", "accel_mps2", "elev_delta_m",
      "dist_delta_m", "power_w", "temp_f"};
  return columns;
}

inline MicroTrip whole_trip(const TripTrace& trace) {
  return MicroTrip{trace.trip_id, 0, trace.samples.size(), std::span<const TripSample>(trace.samples)};
}

inline MicroTrip slice_trip(const TripTrace& trace, std::size_t start, std::size_t length) {
  require(length >= 2, "micro-trip length must be >= 2");
  require(start + length <= trace.samples.size(), "micro-trip slice exceeds trace " + trace.trip_id);
  return MicroTrip{trace.trip_id, start, length,
                   std::span<const TripSample>(trace.samples).subspan(start, length)};
}

/// Parses the trace CSV. Errors carry the 1-based line number of the offending row.
inline std::vector<TripTrace> load_trips(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw DataError(path + ": empty file");
  const auto& names = trace_csv_columns();
  const auto cols = csv::locate_columns(lines[0], names, path);

  std::vector<TripTrace> traces;
  std::map<std::string, std::size_t, std::less<>> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    if (csv::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(li + 1) + ": ";
    const auto cells = csv::split(line);

    auto cell = [&](std::size_t k) -> std::string_view {
      if (cols[k] >= cells.size()) throw DataError(where + "missing value for '" + names[k] + "'");
      return cells[cols[k]];
    };
    auto number = [&](std::size_t k) {
      const auto v = csv::parse_double(cell(k));
      if (!v || !std::isfinite(*v)) {
        throw DataError(where + "non-numeric value '" + std::string(cell(k)) + "' in column '" + names[k] + "'");
      }
      return *v;
    };

    const std::string id(csv::trim(cell(0)));
    if (id.empty()) throw DataError(where + "empty trip_id");
    const double t = number(1);
    TripSample s{number(2), number(3), number(4), number(5), number(6), number(7)};
    if (s.speed < 0.0) throw DataError(where + "negative speed");
    if (s.distance_delta < 0.0) throw DataError(where + "negative dist_delta_m");

    if (traces.empty() || traces.back().trip_id != id) {
      if (seen.contains(id)) throw DataError(where + "rows of trip '" + id + "' are not contiguous");
      seen.emplace(id, traces.size());
      traces.push_back(TripTrace{id, {}});
    }
    auto& trace = traces.back();
    if (t != static_cast<double>(trace.samples.size())) {
      throw DataError(where + "t_sec must ascend from 0 in steps of 1 s (expected " +
                      std::to_string(trace.samples.size()) + ")");
    }
    trace.samples.push_back(s);
  }
  for (const auto& trace : traces) {
    if (trace.samples.size() < 2) {
      throw DataError(path + ": trip '" + trace.trip_id + "' has fewer than 2 samples");
    }
  }
  return traces;
}

inline void write_trips(const std::string& path, std::span<const TripTrace> traces) {
  auto out = csv::open_output(path);
  const auto& names = trace_csv_columns();
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  for (const auto& trace : traces) {
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
      const auto& s = trace.samples[i];
      out << trace.trip_id << ',' << i << ',' << csv::format_double(s.speed) << ','
          << csv::format_double(s.acceleration) << ',' << csv::format_double(s.elevation_delta) << ','
          << csv::format_double(s.distance_delta) << ',' << csv::format_double(s.power) << ','
          << csv::format_double(s.temperature) << '\n';
    }
  }
}

/// Draws `count` micro-trips with replacement: a uniform trace (among those
/// at least min_length long), a uniform start, then a uniform admissible length.
inline std::vector<MicroTrip> generate_micro_trips(std::span<const TripTrace> traces, std::size_t count,
                                                   LengthBounds bounds, std::uint64_t seed) {
  require(count >= 1, "micro-trip count must be >= 1");
  require(bounds.min_length >= 2, "minimum micro-trip length must be >= 2");
  require(bounds.max_length == 0 || bounds.max_length >= bounds.min_length,
          "maximum micro-trip length must be >= minimum");

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (traces[i].samples.size() >= bounds.min_length) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw DataError("no trace has at least " + std::to_string(bounds.min_length) + " samples");
  }

  Rng rng = make_rng(seed);
  std::vector<MicroTrip> micros;
  micros.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& trace = traces[eligible[uniform_index(rng, 0, eligible.size() - 1)]];
    const std::size_t n = trace.samples.size();
    const std::size_t start = uniform_index(rng, 0, n - bounds.min_length);
    std::size_t longest = n - start;
    if (bounds.max_length != 0) longest = std::min(longest, bounds.max_length);
    const std::size_t length = uniform_index(rng, bounds.min_length, longest);
    micros.push_back(slice_trip(trace, start, length));
  }
  return micros;
}

/// Net energy in kWh over 1 s samples; negative means net regeneration.
inline double trip_energy(std::span<const TripSample> samples) {
  double joules = 0.0;
  for (const auto& s : samples) joules += s.power;
  return joules / kJoulesPerKwh;
}

inline double trip_energy(const MicroTrip& micro) { return trip_energy(micro.samples); }

/// Keeps micro-trips whose net energy magnitude is at least `threshold_kwh`.
inline std::vector<MicroTrip> filter_micro_trips(std::span<const MicroTrip> micros, double threshold_kwh) {
  require(threshold_kwh > 0.0, "energy filter threshold must be > 0");
  std::vector<MicroTrip> kept;
  for (const auto& m : micros) {
    if (std::abs(trip_energy(m)) >= threshold_kwh) kept.push_back(m);
  }
  return kept;
}

}  // namespace evprob
