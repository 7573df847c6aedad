#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "evprob/error.hpp"
#include "evprob/features.hpp"
#include "evprob/rng.hpp"

namespace evprob {

template <class T>
struct Split {
  std::vector<T> train;
  std::vector<T> test;
  std::uint64_t seed = 0;
};

using DatasetSplit = Split<FeatureVector>;

/// Number of rows assigned to the training side: floor(ratio * n), with a
/// small guard against representation error such as 0.29 * 100 = 28.999...
inline std::size_t train_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

/// Uniform random permutation by seed; the first floor(ratio*n) go to train.
template <class T>
Split<T> split_dataset(std::span<const T> rows, double ratio, std::uint64_t seed) {
  require(ratio > 0.0 && ratio < 1.0, "split ratio must be in (0, 1)");
  require(rows.size() >= 2, "need at least 2 rows to split");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed);
  shuffle(order.begin(), order.end(), rng);

  const std::size_t n_train = train_count(rows.size(), ratio);
  Split<T> out;
  out.seed = seed;
  out.train.reserve(n_train);
  out.test.reserve(rows.size() - n_train);
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_train ? out.train : out.test).push_back(rows[order[k]]);
  }
  return out;
}

template <class T>
Split<T> split_dataset(const std::vector<T>& rows, double ratio, std::uint64_t seed) {
  return split_dataset(std::span<const T>(rows), ratio, seed);
}

struct FieldStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct DescriptiveStats {
  std::array<FieldStats, kFeatureCount> features{};
  std::optional<FieldStats> energy;  // present when every row is labeled
};

inline DescriptiveStats descriptive_stats(std::span<const FeatureVector> rows) {
  require(!rows.empty(), "descriptive statistics need at least one row");
  DescriptiveStats out;
  const double n = static_cast<double>(rows.size());
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const double first = rows.front().values()[i];
    FieldStats s{first, first, 0.0};
    for (const auto& r : rows) {
      const double v = r.values()[i];
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
      s.mean += v;
    }
    s.mean /= n;
    out.features[i] = s;
  }
  const bool all_labeled =
      std::all_of(rows.begin(), rows.end(), [](const FeatureVector& r) { return r.label_energy.has_value(); });
  if (all_labeled) {
    FieldStats s{*rows.front().label_energy, *rows.front().label_energy, 0.0};
    for (const auto& r : rows) {
      s.min = std::min(s.min, *r.label_energy);
      s.max = std::max(s.max, *r.label_energy);
      s.mean += *r.label_energy;
    }
    s.mean /= n;
    out.energy = s;
  }
  return out;
}

}  // namespace evprob
