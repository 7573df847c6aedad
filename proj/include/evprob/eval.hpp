#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evprob/csv.hpp"
#include "evprob/error.hpp"
#include "evprob/features.hpp"
#include "evprob/inference.hpp"
#include "evprob/model.hpp"
#include "evprob/rng.hpp"

namespace evprob {

/// Mean absolute percentage error, in percent.
inline double mape(std::span<const double> actual, std::span<const double> predicted) {
  require(actual.size() == predicted.size(), "mape: length mismatch");
  require(!actual.empty(), "mape: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == 0.0) throw std::invalid_argument("mape: actual value is zero at index " + std::to_string(i));
    total += std::abs((actual[i] - predicted[i]) / actual[i]);
  }
  return total / static_cast<double>(actual.size()) * 100.0;
}

inline double rmse(std::span<const double> actual, std::span<const double> predicted) {
  require(actual.size() == predicted.size(), "rmse: length mismatch");
  require(!actual.empty(), "rmse: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double r = actual[i] - predicted[i];
    total += r * r;
  }
  return std::sqrt(total / static_cast<double>(actual.size()));
}

/// Fraction of actuals inside the central `level` interval of each prediction.
inline double coverage(std::span<const GaussianPrediction> predictions, std::span<const double> actual, double level) {
  require(predictions.size() == actual.size(), "coverage: length mismatch");
  require(!actual.empty(), "coverage: empty input");
  const double z = normal_quantile_two_sided(level);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double lo = predictions[i].mean - z * predictions[i].std;
    const double hi = predictions[i].mean + z * predictions[i].std;
    if (lo <= actual[i] && actual[i] <= hi) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(actual.size());
}

inline std::vector<double> labels_of(std::span<const FeatureVector> rows) {
  std::vector<double> y;
  y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].label_energy) throw DataError("row " + std::to_string(i) + " has no energy label");
    y.push_back(*rows[i].label_energy);
  }
  return y;
}

// Permutation importance

struct FeatureImportance {
  Feature feature = Feature::AvgSpeed;
  double raw = 0.0;            // MAPE increase in percentage points, averaged over repeats
  double share_percent = 0.0;  // max(raw, 0) as a percent of the sum of positive raws
};

struct PermutationImportance {
  double baseline_mape = 0.0;
  std::size_t repeats = 0;
  std::vector<FeatureImportance> features;

  std::vector<Feature> ranking() const {
    auto sorted = features;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.raw > b.raw; });
    std::vector<Feature> out;
    for (const auto& f : sorted) out.push_back(f.feature);
    return out;
  }

  const FeatureImportance& of(Feature f) const {
    for (const auto& fi : features) {
      if (fi.feature == f) return fi;
    }
    throw std::invalid_argument("feature not evaluated: " + std::string(feature_name(f)));
  }
};

using PointPredictor = std::function<std::vector<double>(std::span<const FeatureVector>)>;

/// Shuffles one feature column at a time (repeats times each) and reports the
/// mean MAPE increase over the unshuffled baseline. Shuffle streams are
/// derived from (seed, feature, repeat).
inline PermutationImportance permutation_importance(const PointPredictor& predict,
                                                    std::span<const FeatureVector> rows,
                                                    std::span<const Feature> features, std::size_t repeats,
                                                    std::uint64_t seed) {
  require(rows.size() >= 2, "permutation importance needs at least 2 rows");
  require(repeats >= 1, "permutation importance needs at least 1 repeat");
  const auto actual = labels_of(rows);

  PermutationImportance out;
  out.repeats = repeats;
  out.baseline_mape = mape(actual, predict(rows));

  std::vector<FeatureVector> shuffled(rows.begin(), rows.end());
  std::vector<double> column(rows.size());
  for (auto f : features) {
    double total = 0.0;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      for (std::size_t i = 0; i < rows.size(); ++i) column[i] = rows[i][f];
      Rng rng = make_rng(derive_seed(seed, index_of(f) + 1, rep));
      shuffle(column.begin(), column.end(), rng);
      for (std::size_t i = 0; i < rows.size(); ++i) shuffled[i][f] = column[i];
      total += mape(actual, predict(shuffled)) - out.baseline_mape;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) shuffled[i][f] = rows[i][f];
    out.features.push_back({f, total / static_cast<double>(repeats), 0.0});
  }

  double positive = 0.0;
  for (const auto& fi : out.features) positive += std::max(fi.raw, 0.0);
  if (positive > 0.0) {
    for (auto& fi : out.features) fi.share_percent = std::max(fi.raw, 0.0) / positive * 100.0;
  }
  return out;
}

/// Model version: predictions use M posterior samples with one fixed seed,
/// so the baseline and every shuffled evaluation share the same weight draws.
inline PermutationImportance permutation_importance(const TrainedModel& model, std::span<const FeatureVector> rows,
                                                    std::size_t repeats, std::uint64_t seed,
                                                    std::size_t m_samples = 10) {
  const std::uint64_t predict_seed = derive_seed(seed, 0);
  PointPredictor predict = [&](std::span<const FeatureVector> r) {
    return predict_point(model, r, m_samples, predict_seed);
  };
  return permutation_importance(predict, rows, model.inputs, repeats, seed);
}

// Sensitivity sweeps

struct SweepPoint {
  double value = 0.0;
  double ecr_mean = 0.0;  // kWh/km
  double ci_low = 0.0;    // kWh/km
  double ci_high = 0.0;   // kWh/km
};

struct SweepCurve {
  Feature feature = Feature::Temperature;
  std::vector<SweepPoint> points;
};

/// Per-feature median over `rows`; the conditioning point for sweeps.
inline FeatureVector median_baseline(std::span<const FeatureVector> rows) {
  require(!rows.empty(), "median baseline needs at least one row");
  FeatureVector out;
  std::vector<double> column(rows.size());
  for (auto f : kAllFeatures) {
    for (std::size_t i = 0; i < rows.size(); ++i) column[i] = rows[i][f];
    std::sort(column.begin(), column.end());
    const std::size_t mid = column.size() / 2;
    out[f] = column.size() % 2 ? column[mid] : 0.5 * (column[mid - 1] + column[mid]);
  }
  return out;
}

/// Varies one feature over `grid` with the others held at `baseline` and
/// reports predicted energy per km with its confidence interval.
inline SweepCurve sensitivity_sweep(const TrainedModel& model, Feature feature, std::span<const double> grid,
                                    const FeatureVector& baseline, std::size_t m_samples, std::uint64_t seed,
                                    double level = 0.95, Aggregation rule = Aggregation::Average) {
  SweepCurve curve{feature, {}};
  if (grid.empty()) return curve;
  std::vector<FeatureVector> rows(grid.size(), baseline);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    rows[i][feature] = grid[i];
    rows[i].label_energy.reset();
    require(rows[i].distance > 0.0, "sweep needs a positive trip distance to report energy per km");
  }
  const auto preds = predict_posterior(model, rows, m_samples, seed, rule);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double km = rows[i].distance / 1000.0;
    const auto [lo, hi] = confidence_interval(preds[i], level);
    curve.points.push_back({grid[i], preds[i].mean / km, lo / km, hi / km});
  }
  return curve;
}

inline SweepCurve sensitivity_sweep(const TrainedModel& model, const std::string& feature_name_or_alias,
                                    std::span<const double> grid, const FeatureVector& baseline,
                                    std::size_t m_samples, std::uint64_t seed, double level = 0.95,
                                    Aggregation rule = Aggregation::Average) {
  const auto f = feature_from_name(feature_name_or_alias);
  if (!f) throw std::invalid_argument("unknown feature '" + feature_name_or_alias + "'");
  return sensitivity_sweep(model, *f, grid, baseline, m_samples, seed, level, rule);
}

/// Parses "start:stop:step" into an inclusive grid.
inline std::vector<double> parse_grid(const std::string& spec) {
  const auto parts = csv::split(spec, ':');
  if (parts.size() != 3) throw std::invalid_argument("grid must be start:stop:step, got '" + spec + "'");
  const auto a = csv::parse_double(parts[0]), b = csv::parse_double(parts[1]), s = csv::parse_double(parts[2]);
  if (!a || !b || !s) throw std::invalid_argument("grid values must be numeric: '" + spec + "'");
  if (!(*s > 0.0)) throw std::invalid_argument("grid step must be > 0");
  std::vector<double> grid;
  if (*b < *a) return grid;
  const auto n = static_cast<std::size_t>(std::floor((*b - *a) / *s + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) grid.push_back(*a + static_cast<double>(i) * *s);
  return grid;
}

// Reports

struct EvalReport {
  std::string model_kind;
  std::size_t rows = 0;
  std::size_t m_samples = 0;
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::Average;
  double mape = 0.0;
  double rmse = 0.0;
  std::optional<double> coverage_95;
  std::optional<PermutationImportance> importance;
  std::vector<SweepCurve> sweeps;
};

inline EvalReport evaluate(const TrainedModel& model, std::span<const FeatureVector> rows, std::size_t m_samples,
                           std::uint64_t seed, Aggregation rule = Aggregation::Average) {
  const auto actual = labels_of(rows);
  EvalReport r;
  r.model_kind = std::string(model_kind_name(model.kind));
  r.rows = rows.size();
  r.m_samples = m_samples;
  r.seed = seed;
  r.aggregation = rule;
  std::vector<double> point;
  if (model.probabilistic()) {
    const auto preds = predict_posterior(model, rows, m_samples, seed, rule);
    for (const auto& p : preds) point.push_back(p.mean);
    r.coverage_95 = coverage(preds, actual, 0.95);
  } else {
    point = predict_point(model, rows, m_samples, seed);
  }
  r.mape = mape(actual, point);
  r.rmse = rmse(actual, point);
  return r;
}

inline nlohmann::json importance_to_json(const PermutationImportance& imp) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : imp.features) {
    features.push_back({{"feature", std::string(feature_name(f.feature))},
                        {"mape_increase", f.raw},
                        {"share_percent", f.share_percent}});
  }
  return {{"metric", "mape"}, {"baseline_mape", imp.baseline_mape}, {"repeats", imp.repeats}, {"features", features}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["model_kind"] = r.model_kind;
  j["rows"] = r.rows;
  j["m_samples"] = r.m_samples;
  j["seed"] = r.seed;
  j["aggregation"] = r.aggregation == Aggregation::Average ? "average" : "mixture";
  j["mape"] = r.mape;
  j["rmse"] = r.rmse;
  j["coverage_95"] = r.coverage_95 ? nlohmann::json(*r.coverage_95) : nlohmann::json();
  if (r.importance) j["importance"] = importance_to_json(*r.importance);
  if (!r.sweeps.empty()) {
    nlohmann::json sweeps = nlohmann::json::array();
    for (const auto& c : r.sweeps) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : c.points) pts.push_back({p.value, p.ecr_mean, p.ci_low, p.ci_high});
      sweeps.push_back({{"feature", std::string(feature_name(c.feature))}, {"points", pts}});
    }
    j["sweeps"] = sweeps;
  }
  return j;
}

inline void write_sweep_csv(const std::string& path, std::span<const SweepCurve> curves) {
  auto out = csv::open_output(path);
  out << "feature,value,ecr_mean,ci_low,ci_high\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << feature_name(c.feature) << ',' << csv::format_double(p.value) << ',' << csv::format_double(p.ecr_mean)
          << ',' << csv::format_double(p.ci_low) << ',' << csv::format_double(p.ci_high) << '\n';
    }
  }
}

inline void write_predictions_csv(const std::string& path, std::span<const GaussianPrediction> preds,
                                  double level, std::size_t m_samples, std::uint64_t seed) {
  auto out = csv::open_output(path);
  out << "mean_kwh,std_kwh,ci_low_kwh,ci_high_kwh,m_samples,seed\n";
  for (const auto& p : preds) {
    const auto [lo, hi] = confidence_interval(p, level);
    out << csv::format_double(p.mean) << ',' << csv::format_double(p.std) << ',' << csv::format_double(lo) << ','
        << csv::format_double(hi) << ',' << m_samples << ',' << seed << '\n';
  }
}

}  // namespace evprob
