#pragma once

// Synthetic trip traces with a known energy law. Used as ground truth when
// recorded data is unavailable; not a vehicle simulator.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evprob/error.hpp"
#include "evprob/features.hpp"
#include "evprob/rng.hpp"
#include "evprob/trip_data.hpp"

namespace evprob::synth {

struct DriverProfile {
  double aggressiveness = 0.3;  // [0, 1]: frequency and size of acceleration bursts
  double cruise_speed = 12.0;   // m/s
  double speed_noise = 0.3;     // m/s per second, std of the random-walk step

  void validate() const {
    require(aggressiveness >= 0.0 && aggressiveness <= 1.0, "aggressiveness must be in [0, 1]");
    require(cruise_speed > 0.0, "cruise speed must be > 0");
    require(speed_noise >= 0.0, "speed noise must be >= 0");
  }
};

/// Per-second power law, in watts:
///   m*v*a          (traction; times regen_efficiency when negative)
/// + m*g*dh         (climbing; times regen_efficiency when negative)
/// + m*g*c_rr*dx    (rolling)
/// + 0.5*rho*CdA*v^3 (aero)
/// + max(0, aux_base + aux_temp_coef * (aux_ref_temp - T))  (auxiliary / HVAC)
struct EnergyLaw {
  double mass_kg = 1600.0;
  double gravity = 9.81;
  double rolling_coef = 0.012;
  double air_density = 1.2;
  double drag_area = 0.65;  // Cd * A, m^2
  double regen_efficiency = 0.6;
  double aux_base_w = 600.0;
  double aux_temp_coef_w_per_f = 40.0;  // > 0: warmer trips draw less
  double aux_ref_temp_f = 85.0;

  void validate() const {
    require(regen_efficiency >= 0.0 && regen_efficiency <= 1.0, "regeneration efficiency must be in [0, 1]");
    require(mass_kg > 0.0, "mass must be > 0");
  }

  double traction_w(double speed, double accel) const {
    const double p = mass_kg * speed * accel;
    return p >= 0.0 ? p : regen_efficiency * p;
  }
  double climbing_w(double elevation_delta) const {
    const double p = mass_kg * gravity * elevation_delta;
    return p >= 0.0 ? p : regen_efficiency * p;
  }
  double rolling_w(double distance_delta) const { return mass_kg * gravity * rolling_coef * distance_delta; }
  double aero_w(double speed) const { return 0.5 * air_density * drag_area * speed * speed * speed; }
  double auxiliary_w(double temperature_f) const {
    return std::max(0.0, aux_base_w + aux_temp_coef_w_per_f * (aux_ref_temp_f - temperature_f));
  }

  /// Noise-free power for one 1 s sample.
  double power_w(const TripSample& s) const {
    return traction_w(s.speed, s.acceleration) + climbing_w(s.elevation_delta) + rolling_w(s.distance_delta) +
           aero_w(s.speed) + auxiliary_w(s.temperature);
  }
};

struct SynthWorld {
  double hill_amplitude_m = 15.0;
  double hill_wavelength_m = 2500.0;
  double grade_trend = 0.0;  // net rise per metre travelled
  double temperature_f = 60.0;
  double power_noise_w = 0.0;  // std of per-second Gaussian observation noise
  EnergyLaw law{};

  void validate() const {
    require(hill_amplitude_m >= 0.0, "hill amplitude must be >= 0");
    require(hill_wavelength_m > 0.0, "hill wavelength must be > 0");
    require(power_noise_w >= 0.0, "power noise must be >= 0");
    law.validate();
  }

  static SynthWorld flat(double temperature_f = 60.0) {
    SynthWorld w;
    w.hill_amplitude_m = 0.0;
    w.temperature_f = temperature_f;
    return w;
  }
};

/// Seeded trace: speed is a mean-reverting random walk around the cruise
/// speed plus acceleration bursts whose rate and size scale with
/// aggressiveness; elevation follows two superposed sinusoids of distance.
inline TripTrace generate_trace(const DriverProfile& profile, const SynthWorld& world, std::size_t duration_s,
                                std::uint64_t seed, std::string trip_id = "synth") {
  require(duration_s >= 2, "synthetic trace duration must be >= 2 s");
  profile.validate();
  world.validate();

  Rng rng = make_rng(seed);
  const double two_pi = 2.0 * std::numbers::pi;
  const double phase1 = two_pi * uniform01(rng);
  const double phase2 = two_pi * uniform01(rng);
  const double amp = world.hill_amplitude_m;
  const double lambda = world.hill_wavelength_m;
  auto height = [&](double x) {
    return amp * std::sin(two_pi * x / lambda + phase1) + amp / 3.0 * std::sin(two_pi * x * 3.7 / lambda + phase2) +
           world.grade_trend * x;
  };

  constexpr double kReversion = 0.02;
  constexpr double kMaxSpeed = 40.0;
  const double aggr = profile.aggressiveness;
  const double burst_rate = 0.06 * aggr;

  TripTrace trace{std::move(trip_id), {}};
  trace.samples.reserve(duration_s);
  double v = profile.cruise_speed;
  double x = 0.0;
  std::size_t burst_left = 0;
  double burst_accel = 0.0;
  for (std::size_t i = 0; i < duration_s; ++i) {
    if (burst_left == 0 && aggr > 0.0 && uniform01(rng) < burst_rate) {
      burst_left = 3 + uniform_index(rng, 0, 5);
      const double magnitude = aggr * (0.6 + 1.4 * uniform01(rng));
      burst_accel = v < profile.cruise_speed * 1.2 ? magnitude : -magnitude;
    }
    double a = kReversion * (profile.cruise_speed - v);
    if (profile.speed_noise > 0.0) a += profile.speed_noise * standard_normal(rng);
    if (burst_left > 0) {
      a += burst_accel;
      --burst_left;
    }
    a = std::clamp(a, -v, kMaxSpeed - v);

    TripSample s;
    s.speed = v;
    s.acceleration = a;
    s.distance_delta = v + 0.5 * a;  // exact for constant acceleration over 1 s
    s.elevation_delta = height(x + s.distance_delta) - height(x);
    s.temperature = world.temperature_f;
    s.power = world.law.power_w(s);
    if (world.power_noise_w > 0.0) s.power += world.power_noise_w * standard_normal(rng);
    trace.samples.push_back(s);

    x += s.distance_delta;
    v += a;
  }
  return trace;
}

/// Ranges from which each fleet trip draws its driver and world.
struct FleetConfig {
  std::size_t trips = 50;
  std::size_t min_duration_s = 1800;
  std::size_t max_duration_s = 3600;
  double aggressiveness_min = 0.0, aggressiveness_max = 1.0;
  double cruise_min = 5.0, cruise_max = 20.0;
  double speed_noise_min = 0.1, speed_noise_max = 0.5;
  double temperature_min_f = 33.0, temperature_max_f = 85.0;
  double hill_amplitude_min_m = 0.0, hill_amplitude_max_m = 15.0;
  double grade_trend_max = 0.01;  // trend drawn from [-max, max]
  double power_noise_w = 0.0;
  EnergyLaw law{};

  void validate() const {
    require(trips >= 1, "fleet needs at least one trip");
    require(min_duration_s >= 2 && max_duration_s >= min_duration_s, "invalid duration range");
    require(aggressiveness_min >= 0.0 && aggressiveness_max <= 1.0 && aggressiveness_min <= aggressiveness_max,
            "invalid aggressiveness range");
    require(cruise_min > 0.0 && cruise_max >= cruise_min, "invalid cruise speed range");
    require(speed_noise_min >= 0.0 && speed_noise_max >= speed_noise_min, "invalid speed noise range");
    require(temperature_max_f >= temperature_min_f, "invalid temperature range");
    require(hill_amplitude_min_m >= 0.0 && hill_amplitude_max_m >= hill_amplitude_min_m, "invalid hill range");
    require(grade_trend_max >= 0.0, "grade trend bound must be >= 0");
    require(power_noise_w >= 0.0, "power noise must be >= 0");
    law.validate();
  }
};

inline TripTrace generate_fleet_trip(const FleetConfig& c, std::uint64_t seed, std::size_t index) {
  Rng rng = make_rng(seed, index);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  DriverProfile p;
  p.aggressiveness = between(c.aggressiveness_min, c.aggressiveness_max);
  p.cruise_speed = between(c.cruise_min, c.cruise_max);
  p.speed_noise = between(c.speed_noise_min, c.speed_noise_max);
  SynthWorld w;
  w.temperature_f = between(c.temperature_min_f, c.temperature_max_f);
  w.hill_amplitude_m = between(c.hill_amplitude_min_m, c.hill_amplitude_max_m);
  w.grade_trend = between(-c.grade_trend_max, c.grade_trend_max);
  w.power_noise_w = c.power_noise_w;
  w.law = c.law;
  const auto duration = static_cast<std::size_t>(uniform_index(rng, c.min_duration_s, c.max_duration_s));
  char id[32];
  std::snprintf(id, sizeof(id), "synth-%04zu", index);
  return generate_trace(p, w, duration, rng(), id);
}

inline std::vector<TripTrace> generate_fleet(const FleetConfig& c, std::uint64_t seed) {
  c.validate();
  std::vector<TripTrace> out;
  out.reserve(c.trips);
  for (std::size_t i = 0; i < c.trips; ++i) out.push_back(generate_fleet_trip(c, seed, i));
  return out;
}

/// Adds N(0, std) noise to every label.
inline void add_label_noise(std::span<FeatureVector> rows, double std, std::uint64_t seed) {
  require(std >= 0.0, "label noise std must be >= 0");
  Rng rng = make_rng(seed);
  for (auto& r : rows) {
    if (!r.label_energy) throw DataError("cannot add label noise to an unlabeled row");
    *r.label_energy += std * standard_normal(rng);
  }
}

inline nlohmann::json energy_law_to_json(const EnergyLaw& l) {
  return {{"mass_kg", l.mass_kg},
          {"gravity", l.gravity},
          {"rolling_coef", l.rolling_coef},
          {"air_density", l.air_density},
          {"drag_area", l.drag_area},
          {"regen_efficiency", l.regen_efficiency},
          {"aux_base_w", l.aux_base_w},
          {"aux_temp_coef_w_per_f", l.aux_temp_coef_w_per_f},
          {"aux_ref_temp_f", l.aux_ref_temp_f}};
}

}  // namespace evprob::synth
