#include <gtest/gtest.h>

#include <numeric>

#include "evprob/eval.hpp"
#include "support.hpp"

using namespace evprob;

namespace {

std::vector<FeatureVector> synth_set(std::size_t rows, std::uint64_t seed) {
  evprob::testing::SynthDataConfig c;
  c.trips = 12;
  c.rows = rows;
  c.draws = rows + rows / 4;
  return evprob::testing::synth_rows(c, seed);
}

// Untrained prob-wu model with every input weight of `f` set to zero, so the
// feature cannot influence any output.
TrainedModel model_ignoring(Feature f, std::span<const FeatureVector> rows) {
  TrainConfig c;
  c.epochs = 0;
  c.seed = 2;
  auto m = train(rows, ModelKind::ProbWithUncertainty, c);
  auto& first = std::get<nn::DenseParams>(m.network.layers[0].params);
  first.weight.row(static_cast<Eigen::Index>(index_of(f))).setZero();
  return m;
}

}  // namespace

TEST(Mape, Examples) {
  EXPECT_NEAR(mape(std::vector<double>{2.0}, std::vector<double>{1.8}), 10.0, 1e-12);
  const std::vector<double> y{1.0, -2.0, 0.5};
  EXPECT_EQ(mape(y, y), 0.0);
  EXPECT_THROW(mape(std::vector<double>{0.0}, std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(mape(std::vector<double>{1.0}, std::vector<double>{}), std::invalid_argument);
}

TEST(Rmse, Examples) {
  EXPECT_NEAR(rmse(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0}), std::sqrt(12.5), 1e-15);
  const std::vector<double> y{1.0, 2.0};
  EXPECT_EQ(rmse(y, y), 0.0);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST(Metrics, PermutationAndScaleInvariance) {
  Rng rng = make_rng(1);
  std::vector<double> y(50), p(50);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.5 + uniform01(rng);
    p[i] = y[i] + 0.1 * standard_normal(rng);
  }
  const double m0 = mape(y, p), r0 = rmse(y, p);
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), rng);
  std::vector<double> ys, ps;
  for (auto i : order) {
    ys.push_back(y[i]);
    ps.push_back(p[i]);
  }
  EXPECT_NEAR(mape(ys, ps), m0, 1e-12);
  EXPECT_NEAR(rmse(ys, ps), r0, 1e-12);
  for (double c : {0.01, 3.0, 250.0}) {
    std::vector<double> yc, pc;
    for (std::size_t i = 0; i < y.size(); ++i) {
      yc.push_back(c * y[i]);
      pc.push_back(c * p[i]);
    }
    EXPECT_NEAR(mape(yc, pc), m0, 1e-10);
    EXPECT_NEAR(rmse(yc, pc), c * r0, 1e-12 * c);
  }
}

TEST(Coverage, Examples) {
  const std::vector<double> y{1.0, 2.0, 3.0};
  std::vector<GaussianPrediction> exact;
  for (double v : y) exact.push_back({v, 0.0, {}});
  EXPECT_EQ(coverage(exact, y, 0.95), 1.0);
  std::vector<GaussianPrediction> far;
  for (double v : y) far.push_back({v + 100.0, 1.0, {}});
  EXPECT_EQ(coverage(far, y, 0.95), 0.0);
  EXPECT_THROW(coverage(far, std::vector<double>{1.0}, 0.95), std::invalid_argument);
}

TEST(Coverage, CalibratedGaussianHitsLevel) {
  Rng rng = make_rng(2);
  const std::size_t n = 20000;
  std::vector<GaussianPrediction> preds;
  std::vector<double> y;
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = 5.0 * standard_normal(rng), s = 0.1 + uniform01(rng);
    preds.push_back({mu, s, {}});
    y.push_back(mu + s * standard_normal(rng));
  }
  const double se = std::sqrt(0.95 * 0.05 / n);
  EXPECT_NEAR(coverage(preds, y, 0.95), 0.95, 4 * se);
  double prev = 0.0;
  for (double level : {0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99}) {
    const double c = coverage(preds, y, level);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(PermutationImportance, ConstantFeatureIsExactlyZero) {
  auto rows = synth_set(200, 3);
  for (auto& r : rows) r.temperature = 55.0;
  const auto m = model_ignoring(Feature::Rpa, rows);
  const auto imp = permutation_importance(m, rows, 3, 4);
  EXPECT_EQ(imp.of(Feature::Temperature).raw, 0.0);
  EXPECT_EQ(imp.of(Feature::Temperature).share_percent, 0.0);
}

TEST(PermutationImportance, UnusedInputIsZero) {
  const auto rows = synth_set(200, 5);
  const auto m = model_ignoring(Feature::PosElevation, rows);
  const auto imp = permutation_importance(m, rows, 5, 6);
  EXPECT_NEAR(imp.of(Feature::PosElevation).raw, 0.0, 1e-9);
  EXPECT_NEAR(imp.of(Feature::PosElevation).share_percent, 0.0, 1e-6);
  EXPECT_EQ(imp.features.size(), kFeatureCount);
}

TEST(PermutationImportance, SharesSumToHundredAndRankingIsSorted) {
  const auto rows = synth_set(300, 7);
  // Energy from distance plus a small RPA term.
  PointPredictor predict = [](std::span<const FeatureVector> r) {
    std::vector<double> out;
    for (const auto& x : r) out.push_back(0.0002 * x.distance + 0.01 * x.rpa);
    return out;
  };
  const auto imp = permutation_importance(predict, rows, kAllFeatures, 10, 8);
  double total = 0.0;
  for (const auto& f : imp.features) total += f.share_percent;
  EXPECT_NEAR(total, 100.0, 1e-9);
  EXPECT_EQ(imp.ranking().front(), Feature::Distance);
  for (auto f : {Feature::Temperature, Feature::AvgSpeed, Feature::NegElevation}) EXPECT_EQ(imp.of(f).raw, 0.0);
}

TEST(PermutationImportance, SeedsAgreeWithManyRepeats) {
  const auto rows = synth_set(400, 9);
  TrainConfig c;
  c.learning_rate = 0.005;
  c.epochs = 60;
  c.batch_size = 128;
  c.seed = 1;
  const auto m = train(rows, ModelKind::Probabilistic, c);
  const auto a = permutation_importance(m, rows, 40, 11);
  const auto b = permutation_importance(m, rows, 40, 12);
  for (auto f : kAllFeatures) {
    EXPECT_NEAR(a.of(f).share_percent, b.of(f).share_percent, 2.0) << feature_name(f);
  }
}

TEST(PermutationImportance, Guards) {
  const auto rows = synth_set(20, 13);
  PointPredictor predict = [](std::span<const FeatureVector> r) { return std::vector<double>(r.size(), 1.0); };
  EXPECT_THROW(permutation_importance(predict, std::span(rows.data(), 1), kAllFeatures, 1, 0), std::invalid_argument);
  EXPECT_THROW(permutation_importance(predict, rows, kAllFeatures, 0, 0), std::invalid_argument);
}

TEST(Sweep, EmptyGridUnknownFeatureAndEcr) {
  const auto rows = synth_set(100, 14);
  const auto m = model_ignoring(Feature::Rpa, rows);
  const auto base = median_baseline(rows);
  EXPECT_TRUE(sensitivity_sweep(m, Feature::Temperature, std::vector<double>{}, base, 10, 1).points.empty());
  EXPECT_THROW(sensitivity_sweep(m, "wind", std::vector<double>{1.0}, base, 10, 1), std::invalid_argument);
  const std::vector<double> grid{40.0, 60.0};
  const auto curve = sensitivity_sweep(m, "temperature", grid, base, 10, 1);
  ASSERT_EQ(curve.points.size(), 2u);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto x = base;
    x.temperature = grid[i];
    const auto p = predict_posterior(m, x, 10, 1);
    const double km = base.distance / 1000.0;
    EXPECT_NEAR(curve.points[i].ecr_mean, p.mean / km, 1e-12);
    const auto [lo, hi] = confidence_interval(p, 0.95);
    EXPECT_NEAR(curve.points[i].ci_low, lo / km, 1e-12);
    EXPECT_NEAR(curve.points[i].ci_high, hi / km, 1e-12);
    EXPECT_EQ(curve.points[i].value, grid[i]);
  }
}

TEST(Sweep, MedianBaseline) {
  std::vector<FeatureVector> rows(4);
  for (int i = 0; i < 4; ++i) rows[i].rpa = i * 1.0;
  rows[0].distance = 7.0;
  EXPECT_EQ(median_baseline(rows).rpa, 1.5);
  EXPECT_EQ(median_baseline(std::span(rows.data(), 3)).rpa, 1.0);
  EXPECT_EQ(median_baseline(rows).distance, 0.0);
  EXPECT_FALSE(median_baseline(rows).label_energy);
}

TEST(Sweep, TemperatureLowersPredictedEcr) {
  const auto rows = synth_set(2000, 15);
  TrainConfig c;
  c.learning_rate = 0.005;
  c.epochs = 120;
  c.batch_size = 128;
  c.seed = 3;
  const auto m = train(rows, ModelKind::ProbWithUncertainty, c);
  const auto grid = parse_grid("33:85:1");
  const auto curve = sensitivity_sweep(m, Feature::Temperature, grid, median_baseline(rows), 10, 4);
  EXPECT_LT(curve.points.back().ecr_mean, curve.points.front().ecr_mean);
}

TEST(ParseGrid, InclusiveRangeAndErrors) {
  const auto g = parse_grid("33:85:1");
  ASSERT_EQ(g.size(), 53u);
  EXPECT_EQ(g.front(), 33.0);
  EXPECT_EQ(g.back(), 85.0);
  EXPECT_EQ(parse_grid("0:1:0.25"), (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_TRUE(parse_grid("5:1:1").empty());
  EXPECT_THROW(parse_grid("1:2"), std::invalid_argument);
  EXPECT_THROW(parse_grid("1:2:0"), std::invalid_argument);
  EXPECT_THROW(parse_grid("a:2:1"), std::invalid_argument);
}

TEST(Evaluate, ReportSchemaAndOutputs) {
  const auto rows = synth_set(60, 16);
  const auto m = model_ignoring(Feature::Rpa, rows);
  auto r = evaluate(m, rows, 10, 1);
  EXPECT_EQ(r.rows, rows.size());
  ASSERT_TRUE(r.coverage_95);
  EXPECT_GE(*r.coverage_95, 0.0);
  EXPECT_LE(*r.coverage_95, 1.0);
  r.importance = permutation_importance(m, rows, 2, 3);
  const std::vector<double> grid{33.0, 85.0};
  r.sweeps.push_back(sensitivity_sweep(m, Feature::Temperature, grid, median_baseline(rows), 10, 1));
  const auto j = report_to_json(r);
  for (const char* k : {"mape", "rmse", "coverage_95", "importance", "sweeps", "m_samples", "seed"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["importance"]["features"].size(), kFeatureCount);

  evprob::testing::TempDir dir("eval");
  write_sweep_csv(dir.file("s.csv"), r.sweeps);
  const auto text = evprob::testing::read_text(dir.file("s.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), "feature,value,ecr_mean,ci_low,ci_high");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);

  TrainConfig c;
  c.epochs = 0;
  const auto det = train(rows, ModelKind::Deterministic, c);
  EXPECT_FALSE(evaluate(det, rows, 10, 1).coverage_95);
  EXPECT_TRUE(report_to_json(evaluate(det, rows, 10, 1))["coverage_95"].is_null());
}
