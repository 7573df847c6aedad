#include <gtest/gtest.h>

#include "evprob/features.hpp"
#include "evprob/synth.hpp"
#include "support.hpp"

using namespace evprob;

namespace {

TripTrace trace_of(std::vector<double> v, std::vector<double> a, std::vector<double> dx,
                   std::vector<double> dh = {}, double temp = 60.0) {
  TripTrace t{"t", {}};
  for (std::size_t i = 0; i < v.size(); ++i) {
    t.samples.push_back({v[i], a[i], dh.empty() ? 0.0 : dh[i], dx[i], 0.0, temp});
  }
  return t;
}

// Independent per-second oracle: long double accumulation in reverse order,
// variance via the raw second moment.
FeatureArray brute_force(const TripTrace& t) {
  long double n = static_cast<long double>(t.samples.size());
  long double v = 0, v2 = 0, d = 0, up = 0, down = 0, temp = 0, acc = 0, dec = 0, work = 0;
  for (auto it = t.samples.rbegin(); it != t.samples.rend(); ++it) {
    v += it->speed;
    v2 += static_cast<long double>(it->speed) * it->speed;
    d += it->distance_delta;
    up += std::max(it->elevation_delta, 0.0);
    down += std::min(it->elevation_delta, 0.0);
    temp += it->temperature;
    if (it->acceleration > 0) {
      acc += it->acceleration;
      work += static_cast<long double>(it->speed) * it->acceleration;
    }
    if (it->acceleration < 0) dec += it->acceleration;
  }
  const long double mean = v / n;
  const long double var = std::max<long double>(v2 / n - mean * mean, 0);
  return {static_cast<double>(mean),         static_cast<double>(std::sqrt(var)),
          static_cast<double>(d),            static_cast<double>(up),
          static_cast<double>(down),         static_cast<double>(temp / n),
          static_cast<double>(work / d),     static_cast<double>(acc / n),
          static_cast<double>(dec / n)};
}

}  // namespace

TEST(ExtractFeatures, ConstantTrace) {
  const auto t = trace_of(std::vector<double>(100, 10.0), std::vector<double>(100, 0.0),
                          std::vector<double>(100, 10.0));
  const auto f = extract_features(whole_trip(t));
  EXPECT_EQ(f.avg_speed, 10.0);
  EXPECT_EQ(f.std_speed, 0.0);
  EXPECT_EQ(f.rpa, 0.0);
  EXPECT_EQ(f.avg_accel, 0.0);
  EXPECT_EQ(f.avg_decel, 0.0);
  EXPECT_EQ(f.pos_elev, 0.0);
  EXPECT_EQ(f.neg_elev, 0.0);
  EXPECT_EQ(f.distance, 1000.0);
}

TEST(ExtractFeatures, HandWorkedExample) {
  const auto t = trace_of({0, 1, 2}, {1, 1, 0}, {0, 1, 2});
  const auto f = extract_features(whole_trip(t));
  EXPECT_NEAR(f.rpa, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(f.avg_accel, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(f.avg_decel, 0.0);
  EXPECT_EQ(f.distance, 3.0);
  EXPECT_NEAR(f.std_speed, std::sqrt(2.0 / 3.0), 1e-15);
}

TEST(ExtractFeatures, ZeroAccelerationCountsNowhere) {
  const auto t = trace_of({5, 5, 5, 5}, {0, 2, -1, 0}, {5, 5, 5, 5});
  const auto f = extract_features(whole_trip(t));
  EXPECT_DOUBLE_EQ(f.avg_accel, 0.5);
  EXPECT_DOUBLE_EQ(f.avg_decel, -0.25);
}

TEST(ExtractFeatures, ZeroDistanceWithPositiveWorkThrows) {
  const auto t = trace_of({1, 1}, {1, 0}, {0, 0});
  EXPECT_THROW(extract_features(whole_trip(t)), DataError);
  const auto still = trace_of({0, 0}, {0, 0}, {0, 0});
  EXPECT_EQ(extract_features(whole_trip(still)).rpa, 0.0);
}

TEST(ExtractFeatures, MatchesBruteForceOnRandomTraces) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    synth::DriverProfile p;
    Rng rng = make_rng(seed, 5);
    p.aggressiveness = uniform01(rng);
    p.cruise_speed = 3 + 20 * uniform01(rng);
    synth::SynthWorld w;
    w.hill_amplitude_m = 30 * uniform01(rng);
    w.temperature_f = 33 + 52 * uniform01(rng);
    const auto t = synth::generate_trace(p, w, 2 + uniform_index(rng, 0, 600), seed);
    const auto got = extract_features(whole_trip(t)).values();
    const auto want = brute_force(t);
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const double denom = std::max(std::abs(want[i]), 1e-300);
      if (want[i] == 0.0) {
        EXPECT_EQ(got[i], 0.0);
        continue;
      }
      worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(ExtractFeatures, ElevationTelescopes) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng = make_rng(seed);
    TripTrace t{"e", {}};
    std::vector<double> h{0.0};
    // Integer-valued heights in units of 1/8 m keep every sum exact.
    for (int i = 0; i < 300; ++i) h.push_back(h.back() + static_cast<double>(static_cast<int>(uniform_index(rng, 0, 40)) - 20) / 8.0);
    for (std::size_t i = 1; i < h.size(); ++i) t.samples.push_back({5, 0, h[i] - h[i - 1], 5, 0, 60});
    const auto f = extract_features(whole_trip(t));
    EXPECT_EQ(f.pos_elev + f.neg_elev, h.back() - h.front());
    EXPECT_GE(f.pos_elev, 0.0);
    EXPECT_LE(f.neg_elev, 0.0);
  }
}

TEST(ExtractFeatures, SignInvariants) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    synth::DriverProfile p;
    p.aggressiveness = 0.9;
    const auto f = extract_features(whole_trip(synth::generate_trace(p, {}, 500, seed)));
    EXPECT_GE(f.rpa, 0.0);
    EXPECT_GE(f.avg_accel, 0.0);
    EXPECT_LE(f.avg_decel, 0.0);
    EXPECT_GE(f.std_speed, 0.0);
  }
}

TEST(ExtractFeatures, AddedBurstsRaiseRpa) {
  const auto base = trace_of(std::vector<double>(50, 10.0), std::vector<double>(50, 0.0),
                             std::vector<double>(50, 10.0));
  auto bursty = base;
  for (std::size_t i = 5; i < 50; i += 10) bursty.samples[i].acceleration = 1.5;
  auto burstier = bursty;
  for (std::size_t i = 7; i < 50; i += 10) burstier.samples[i].acceleration = 0.5;
  const double r0 = extract_features(whole_trip(base)).rpa;
  const double r1 = extract_features(whole_trip(bursty)).rpa;
  const double r2 = extract_features(whole_trip(burstier)).rpa;
  EXPECT_LT(r0, r1);
  EXPECT_LT(r1, r2);
}

TEST(Scaler, MinMaxAndMidpoint) {
  std::vector<FeatureVector> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[i].avg_speed = 5.0 * i;
    rows[i].temperature = 3.0;
  }
  const auto p = fit_scaler(rows);
  EXPECT_EQ(p.min[index_of(Feature::AvgSpeed)], 0.0);
  EXPECT_EQ(p.max[index_of(Feature::AvgSpeed)], 10.0);
  EXPECT_EQ(scale_value(p, Feature::AvgSpeed, 5.0), 0.5);
  EXPECT_EQ(scale_value(p, Feature::Temperature, 3.0), 0.0);
  const auto constant = p.constant_features();
  EXPECT_NE(std::find(constant.begin(), constant.end(), Feature::Temperature), constant.end());
  EXPECT_EQ(std::find(constant.begin(), constant.end(), Feature::AvgSpeed), constant.end());
}

TEST(Scaler, EndpointsAndExtrapolation) {
  Rng rng = make_rng(8);
  std::vector<FeatureVector> rows(20);
  for (auto& r : rows) {
    FeatureArray v{};
    for (auto& x : v) x = standard_normal(rng) * 10;
    r = FeatureVector::from_values(v);
  }
  const auto p = fit_scaler(rows);
  const auto lo = apply_scaler(p, FeatureVector::from_values(p.min));
  const auto hi = apply_scaler(p, FeatureVector::from_values(p.max));
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    EXPECT_EQ(lo[i], 0.0);
    EXPECT_EQ(hi[i], 1.0);
  }
  auto above = FeatureVector::from_values(p.max);
  above.rpa += 1.0;
  EXPECT_GT(apply_scaler(p, above)[index_of(Feature::Rpa)], 1.0);
  EXPECT_THROW(fit_scaler(std::vector<FeatureVector>{}), std::invalid_argument);
}

TEST(Scaler, PreservesOrder) {
  Rng rng = make_rng(2);
  std::vector<FeatureVector> rows(30);
  for (auto& r : rows) r.distance = 1000 * uniform01(rng);
  const auto p = fit_scaler(rows);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const bool before = rows[i].distance < rows[i + 1].distance;
    EXPECT_EQ(before, scale_value(p, Feature::Distance, rows[i].distance) <
                          scale_value(p, Feature::Distance, rows[i + 1].distance));
  }
}

TEST(FeatureCsv, RoundTripWithAndWithoutLabel) {
  evprob::testing::TempDir dir("feat");
  Rng rng = make_rng(4);
  std::vector<FeatureVector> rows(10);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    FeatureArray v{};
    for (auto& x : v) x = standard_normal(rng);
    rows[k] = FeatureVector::from_values(v, k % 3 ? std::optional<double>(standard_normal(rng)) : std::nullopt);
  }
  write_features(dir.file("f.csv"), rows);
  EXPECT_EQ(load_features(dir.file("f.csv")), rows);
  const std::string text = evprob::testing::read_text(dir.file("f.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "avg_speed,std_speed,distance,pos_elev,neg_elev,temp,rpa,avg_accel,avg_decel,energy_kwh");
}

TEST(FeatureNames, Lookup) {
  EXPECT_EQ(feature_from_name("rpa"), Feature::Rpa);
  EXPECT_EQ(feature_from_name("temperature"), Feature::Temperature);
  EXPECT_FALSE(feature_from_name("wind"));
}
