#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evprob/csv.hpp"
#include "evprob/error.hpp"
#include "evprob/trip_data.hpp"

namespace evprob {

enum class Feature : std::size_t {
  AvgSpeed,
  StdSpeed,
  Distance,
  PosElevation,
  NegElevation,
  Temperature,
  Rpa,
  AvgAccel,
  AvgDecel,
};

inline constexpr std::size_t kFeatureCount = 9;

inline constexpr std::array<Feature, kFeatureCount> kAllFeatures{
    Feature::AvgSpeed,     Feature::StdSpeed,    Feature::Distance,
    Feature::PosElevation, Feature::NegElevation, Feature::Temperature,
    Feature::Rpa,          Feature::AvgAccel,    Feature::AvgDecel};

/// Inputs used when the driver-behaviour features (RPA, average
/// acceleration/deceleration) are withheld.
inline constexpr std::array<Feature, 6> kNonDriverFeatures{
    Feature::AvgSpeed,     Feature::StdSpeed,    Feature::Distance,
    Feature::PosElevation, Feature::NegElevation, Feature::Temperature};

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "avg_speed", "std_speed", "distance", "pos_elev", "neg_elev", "temp", "rpa", "avg_accel", "avg_decel"};

constexpr std::size_t index_of(Feature f) noexcept { return static_cast<std::size_t>(f); }

constexpr std::string_view feature_name(Feature f) noexcept { return kFeatureNames[index_of(f)]; }

inline std::optional<Feature> feature_from_name(std::string_view name) {
  for (auto f : kAllFeatures) {
    if (feature_name(f) == name) return f;
  }
  if (name == "temperature") return Feature::Temperature;
  if (name == "distance_m") return Feature::Distance;
  return std::nullopt;
}

using FeatureArray = std::array<double, kFeatureCount>;

/// The nine trip-characteristic inputs plus the optional energy label.
struct FeatureVector {
  double avg_speed = 0.0;    // m/s
  double std_speed = 0.0;    // m/s, population std
  double distance = 0.0;     // m
  double pos_elev = 0.0;     // m, >= 0
  double neg_elev = 0.0;     // m, <= 0
  double temperature = 0.0;  // degrees F, trip mean
  double rpa = 0.0;          // m/s^2
  double avg_accel = 0.0;    // m/s^2, >= 0
  double avg_decel = 0.0;    // m/s^2, <= 0
  std::optional<double> label_energy;  // kWh

  static constexpr std::array<double FeatureVector::*, kFeatureCount> kFields{
      &FeatureVector::avg_speed, &FeatureVector::std_speed, &FeatureVector::distance,
      &FeatureVector::pos_elev,  &FeatureVector::neg_elev,  &FeatureVector::temperature,
      &FeatureVector::rpa,       &FeatureVector::avg_accel, &FeatureVector::avg_decel};

  double& operator[](Feature f) { return this->*kFields[index_of(f)]; }
  double operator[](Feature f) const { return this->*kFields[index_of(f)]; }

  FeatureArray values() const {
    FeatureArray out{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = this->*kFields[i];
    return out;
  }

  static FeatureVector from_values(const FeatureArray& v, std::optional<double> label = std::nullopt) {
    FeatureVector fv;
    for (std::size_t i = 0; i < kFeatureCount; ++i) fv.*kFields[i] = v[i];
    fv.label_energy = label;
    return fv;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Computes the trip features from per-second samples.
///
/// Accelerations come from the recorded channel; a zero acceleration counts
/// toward neither the positive nor the negative aggregate. RPA is
/// (1/d) * sum(v_i * a_i) over strictly positive a_i and is 0 for a trip with
/// no positive acceleration work.
inline FeatureVector extract_features(std::span<const TripSample> samples) {
  const std::size_t n = samples.size();
  require(n >= 2, "feature extraction needs at least 2 samples");
  const double count = static_cast<double>(n);

  double speed_sum = 0.0, distance = 0.0, pos = 0.0, neg = 0.0, temp = 0.0;
  double accel_sum = 0.0, decel_sum = 0.0, positive_work = 0.0;
  for (const auto& s : samples) {
    speed_sum += s.speed;
    distance += s.distance_delta;
    if (s.elevation_delta > 0.0) pos += s.elevation_delta;
    if (s.elevation_delta < 0.0) neg += s.elevation_delta;
    temp += s.temperature;
    if (s.acceleration > 0.0) {
      accel_sum += s.acceleration;
      positive_work += s.speed * s.acceleration;
    } else if (s.acceleration < 0.0) {
      decel_sum += s.acceleration;
    }
  }
  const double mean_speed = speed_sum / count;
  double sq = 0.0;
  for (const auto& s : samples) sq += (s.speed - mean_speed) * (s.speed - mean_speed);

  FeatureVector fv;
  fv.avg_speed = mean_speed;
  fv.std_speed = std::sqrt(sq / count);
  fv.distance = distance;
  fv.pos_elev = pos;
  fv.neg_elev = neg;
  fv.temperature = temp / count;
  fv.avg_accel = accel_sum / count;
  fv.avg_decel = decel_sum / count;
  if (distance > 0.0) {
    fv.rpa = positive_work / distance;
  } else if (positive_work > 0.0) {
    throw DataError("RPA undefined: zero distance with positive acceleration work");
  }
  return fv;
}

inline FeatureVector extract_features(const MicroTrip& micro) { return extract_features(micro.samples); }

/// Features plus net energy label.
inline FeatureVector labeled_features(const MicroTrip& micro) {
  auto fv = extract_features(micro);
  fv.label_energy = trip_energy(micro);
  return fv;
}

/// Per-feature min/max taken from the training split only.
struct ScalingParams {
  FeatureArray min{};
  FeatureArray max{};

  bool is_constant(Feature f) const { return max[index_of(f)] <= min[index_of(f)]; }

  std::vector<Feature> constant_features() const {
    std::vector<Feature> out;
    for (auto f : kAllFeatures) {
      if (is_constant(f)) out.push_back(f);
    }
    return out;
  }
};

/// Fits min-max scaling. Constant features are accepted and scale to 0; they
/// are listed by ScalingParams::constant_features so callers can warn.
inline ScalingParams fit_scaler(std::span<const FeatureVector> train) {
  require(!train.empty(), "cannot fit scaler on an empty training set");
  ScalingParams p;
  p.min = train.front().values();
  p.max = p.min;
  for (const auto& fv : train) {
    const auto v = fv.values();
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      p.min[i] = std::min(p.min[i], v[i]);
      p.max[i] = std::max(p.max[i], v[i]);
    }
  }
  return p;
}

inline double scale_value(const ScalingParams& p, Feature f, double x) {
  const auto i = index_of(f);
  const double range = p.max[i] - p.min[i];
  if (range <= 0.0) return 0.0;
  return (x - p.min[i]) / range;
}

/// Min-max scaled vector. Values outside the training range are not clipped.
inline FeatureArray apply_scaler(const ScalingParams& p, const FeatureVector& x) {
  FeatureArray out{};
  for (auto f : kAllFeatures) out[index_of(f)] = scale_value(p, f, x[f]);
  return out;
}

// Feature CSV

inline const std::vector<std::string>& feature_csv_columns() {
  static const std::vector<std::string> columns = [] {
    std::vector<std::string> c(kFeatureNames.begin(), kFeatureNames.end());
    c.emplace_back("energy_kwh");
    return c;
  }();
  return columns;
}

inline void write_features(const std::string& path, std::span<const FeatureVector> rows) {
  auto out = csv::open_output(path);
  const auto& names = feature_csv_columns();
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  for (const auto& fv : rows) {
    const auto v = fv.values();
    for (std::size_t i = 0; i < kFeatureCount; ++i) out << csv::format_double(v[i]) << ',';
    if (fv.label_energy) out << csv::format_double(*fv.label_energy);
    out << '\n';
  }
}

/// Reads a feature CSV. The energy_kwh column may be absent or blank.
inline std::vector<FeatureVector> load_features(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw DataError(path + ": empty file");
  const std::vector<std::string> inputs(kFeatureNames.begin(), kFeatureNames.end());
  const auto cols = csv::locate_columns(lines[0], inputs, path);
  std::optional<std::size_t> label_col;
  {
    const auto header = csv::split(lines[0]);
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (csv::trim(header[c]) == "energy_kwh") label_col = c;
    }
  }

  std::vector<FeatureVector> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (csv::trim(lines[li]).empty()) continue;
    const std::string where = path + ":" + std::to_string(li + 1) + ": ";
    const auto cells = csv::split(lines[li]);
    FeatureArray v{};
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      if (cols[k] >= cells.size()) throw DataError(where + "missing value for '" + inputs[k] + "'");
      const auto parsed = csv::parse_double(cells[cols[k]]);
      if (!parsed || !std::isfinite(*parsed)) {
        throw DataError(where + "non-numeric value in column '" + inputs[k] + "'");
      }
      v[k] = *parsed;
    }
    std::optional<double> label;
    if (label_col && *label_col < cells.size() && !csv::trim(cells[*label_col]).empty()) {
      label = csv::parse_double(cells[*label_col]);
      if (!label || !std::isfinite(*label)) throw DataError(where + "non-numeric value in column 'energy_kwh'");
    }
    rows.push_back(FeatureVector::from_values(v, label));
  }
  return rows;
}

}  // namespace evprob
