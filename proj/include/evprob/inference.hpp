#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "evprob/error.hpp"
#include "evprob/model.hpp"
#include "evprob/rng.hpp"

namespace evprob {

/// How M component Gaussians are combined.
///   Average: y* is the mean of M independent draws, sigma*^2 = sum(sigma_m^2) / M^2.
///   Mixture: moment-matched equal-weight mixture,
///            sigma*^2 = mean(sigma_m^2) + mean((mu_m - mu*)^2).
enum class Aggregation { Average, Mixture };

struct GaussianComponent {
  double mean = 0.0;
  double std = 0.0;
};

struct GaussianPrediction {
  double mean = 0.0;  // kWh
  double std = 0.0;   // kWh
  std::vector<GaussianComponent> components;
};

inline GaussianPrediction aggregate(std::vector<GaussianComponent> components,
                                    Aggregation rule = Aggregation::Average) {
  require(!components.empty(), "aggregate needs at least one component");
  const double m = static_cast<double>(components.size());
  // Running means keep M identical components exact: mean stays mu and the
  // mean variance stays sigma^2.
  double mean = 0.0, mean_var = 0.0;
  for (std::size_t k = 0; k < components.size(); ++k) {
    const double n = static_cast<double>(k + 1);
    mean += (components[k].mean - mean) / n;
    mean_var += (components[k].std * components[k].std - mean_var) / n;
  }
  GaussianPrediction p;
  p.mean = mean;
  if (rule == Aggregation::Average) {
    p.std = std::sqrt(mean_var) / std::sqrt(m);
  } else {
    double spread = 0.0;
    for (const auto& c : components) spread += (c.mean - mean) * (c.mean - mean);
    p.std = std::sqrt(mean_var + spread / m);
  }
  p.components = std::move(components);
  return p;
}

/// Component outputs for all rows: result[m][r] is component m of row r.
/// Component m uses weights drawn from stream (seed, m), so every row sees
/// the same M weight sets and results do not depend on evaluation order.
inline std::vector<std::vector<GaussianComponent>> sample_components(const TrainedModel& model,
                                                                     const nn::Matrix& x, std::size_t m_samples,
                                                                     std::uint64_t seed) {
  require(m_samples >= 1, "number of Monte Carlo samples must be >= 1");
  require(model.probabilistic(), "posterior prediction needs a probabilistic (2-output) model");
  std::vector<std::vector<GaussianComponent>> out(m_samples);
  for (std::size_t m = 0; m < m_samples; ++m) {
    Rng rng = make_rng(seed, m);
    const auto noise = nn::draw_noise(model.network, rng);
    const nn::Matrix raw = nn::forward(model.network, x, noise);
    out[m].reserve(static_cast<std::size_t>(raw.rows()));
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      const auto h = predict_head(raw(r, 0), raw(r, 1));
      out[m].push_back({h.mu, h.sigma});
    }
  }
  return out;
}

/// Monte Carlo predictive posterior for a batch of feature vectors.
inline std::vector<GaussianPrediction> predict_posterior(const TrainedModel& model,
                                                         std::span<const FeatureVector> rows, std::size_t m_samples,
                                                         std::uint64_t seed,
                                                         Aggregation rule = Aggregation::Average) {
  const auto comps = sample_components(model, design_matrix(model, rows), m_samples, seed);
  std::vector<GaussianPrediction> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<GaussianComponent> row;
    row.reserve(m_samples);
    for (std::size_t m = 0; m < m_samples; ++m) row.push_back(comps[m][r]);
    out.push_back(aggregate(std::move(row), rule));
  }
  return out;
}

inline GaussianPrediction predict_posterior(const TrainedModel& model, const FeatureVector& x,
                                            std::size_t m_samples, std::uint64_t seed,
                                            Aggregation rule = Aggregation::Average) {
  return predict_posterior(model, std::span<const FeatureVector>(&x, 1), m_samples, seed, rule).front();
}

/// Point predictions in kWh: the posterior mean for probabilistic models,
/// the network output for the deterministic one.
inline std::vector<double> predict_point(const TrainedModel& model, std::span<const FeatureVector> rows,
                                         std::size_t m_samples, std::uint64_t seed) {
  std::vector<double> out;
  out.reserve(rows.size());
  if (!model.probabilistic()) {
    const nn::Matrix raw = nn::forward_mean(model.network, design_matrix(model, rows));
    for (Eigen::Index r = 0; r < raw.rows(); ++r) out.push_back(raw(r, 0));
    return out;
  }
  for (const auto& p : predict_posterior(model, rows, m_samples, seed)) out.push_back(p.mean);
  return out;
}

/// Two-sided standard-normal quantile z with P(|Z| <= z) = level.
inline double normal_quantile_two_sided(double level) {
  require(level > 0.0 && level < 1.0, "confidence level must be in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

/// mean -/+ z(level) * std.
inline std::pair<double, double> confidence_interval(const GaussianPrediction& p, double level) {
  const double z = normal_quantile_two_sided(level);
  return {p.mean - z * p.std, p.mean + z * p.std};
}

}  // namespace evprob
