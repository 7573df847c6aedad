#pragma once

// Batch command-line surface: synth, ingest, train, predict, evaluate,
// importance, sweep. Every successful run writes manifest.json into the
// output directory; passing it back with --config re-runs the command.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evprob/dataset.hpp"
#include "evprob/eval.hpp"
#include "evprob/inference.hpp"
#include "evprob/model.hpp"
#include "evprob/synth.hpp"
#include "evprob/trip_data.hpp"

namespace evprob::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

inline constexpr int kManifestVersion = 1;

/// Reads JSON config files: top-level scalars set global options, an object
/// named after a subcommand sets that subcommand's options and selects it.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (key == "format" || key == "version" || key == "command" || key == "outputs") continue;
      if (value.is_object()) {
        items.push_back({{key}, "++", {}});
        for (const auto& [name, v] : value.items()) items.push_back({{key}, name, inputs(name, v)});
        items.push_back({{key}, "--", {}});
      } else {
        items.push_back({{}, key, inputs(key, value)});
      }
    }
    return items;
  }

 private:
  static std::vector<std::string> inputs(const std::string& name, const nlohmann::json& v) {
    if (v.is_boolean()) return {v.get<bool>() ? "true" : "false"};
    if (v.is_number()) return {v.dump()};
    if (v.is_string()) return {v.get<std::string>()};
    if (v.is_array()) {
      std::vector<std::string> out;
      for (const auto& e : v) out.push_back(e.is_string() ? e.get<std::string>() : e.dump());
      return out;
    }
    throw CLI::ConversionError("unsupported value for config key '" + name + "'");
  }
};

/// Typed echo of every registered option, used to write the manifest.
class Registry {
 public:
  template <class T>
  CLI::Option* option(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
    echo_[app].push_back({name, [&var] { return nlohmann::json(var); }});
    return app->add_option("--" + name, var, desc)->capture_default_str();
  }

  CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& desc) {
    echo_[app].push_back({name, [&var] { return nlohmann::json(var); }});
    return app->add_flag("--" + name, var, desc);
  }

  nlohmann::json values(CLI::App* app) const {
    nlohmann::json j = nlohmann::json::object();
    if (auto it = echo_.find(app); it != echo_.end()) {
      for (const auto& [name, get] : it->second) j[name] = get();
    }
    return j;
  }

 private:
  std::map<CLI::App*, std::vector<std::pair<std::string, std::function<nlohmann::json()>>>> echo_;
};

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

struct SynthOptions {
  std::size_t trips = 50;
  std::size_t min_duration = 1800;
  std::size_t max_duration = 3600;
  double power_noise_w = 0.0;
  double temp_coef = 40.0;
};

struct IngestOptions {
  std::string traces;
  std::size_t count = 5000;
  double filter_kwh = 0.3;
  std::size_t min_length = 60;
  std::size_t max_length = 0;
  double split = 0.9;
  double label_noise = 0.0;
};

struct TrainOptions {
  std::string features;
  std::string model = "prob-wu";
  double lr = 0.05;
  std::size_t epochs = 400;
  std::size_t batch_size = 0;
  std::size_t elbo_samples = 1;
  double kl_scale = 1.0;
  double initial_sigma = 0.05;
  double prior_mean = 0.0;
  double prior_std = 1.0;
  bool no_driver_behaviour = false;
  bool no_head_init = false;
};

struct PredictOptions {
  std::string model;
  std::string features;
  std::size_t samples = 10;
  double level = 0.95;
  std::string aggregation = "average";
  bool importance = false;
  std::size_t repeats = 10;
  std::vector<std::string> sweep;
  std::vector<std::string> grid;
};

inline Aggregation parse_aggregation(const std::string& name) {
  if (name == "average") return Aggregation::Average;
  if (name == "mixture") return Aggregation::Mixture;
  throw std::invalid_argument("unknown aggregation '" + name + "' (expected average or mixture)");
}

inline nlohmann::json stats_to_json(const DescriptiveStats& s) {
  auto field = [](const FieldStats& f) { return nlohmann::json{{"min", f.min}, {"max", f.max}, {"mean", f.mean}}; };
  nlohmann::json j = nlohmann::json::object();
  for (auto f : kAllFeatures) j[std::string(feature_name(f))] = field(s.features[index_of(f)]);
  if (s.energy) j["energy_kwh"] = field(*s.energy);
  return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  auto out = csv::open_output(path);
  out << j.dump(2) << '\n';
}

namespace detail {

inline std::string in_dir(const GlobalOptions& g, const std::string& name) {
  return (std::filesystem::path(g.out_dir) / name).string();
}

inline std::vector<std::string> cmd_synth(const GlobalOptions& g, const SynthOptions& o, std::ostream& out) {
  synth::FleetConfig fc;
  fc.trips = o.trips;
  fc.min_duration_s = o.min_duration;
  fc.max_duration_s = o.max_duration;
  fc.power_noise_w = o.power_noise_w;
  fc.law.aux_temp_coef_w_per_f = o.temp_coef;
  const auto traces = synth::generate_fleet(fc, g.seed);
  write_trips(in_dir(g, "traces.csv"), traces);
  write_json(in_dir(g, "energy_law.json"), synth::energy_law_to_json(fc.law));
  out << "wrote " << traces.size() << " synthetic traces\n";
  return {"traces.csv", "energy_law.json"};
}

inline std::vector<std::string> cmd_ingest(const GlobalOptions& g, const IngestOptions& o, std::ostream& out) {
  const auto traces = load_trips(o.traces);
  const auto drawn =
      generate_micro_trips(traces, o.count, {o.min_length, o.max_length}, derive_seed(g.seed, 1));
  const auto kept = filter_micro_trips(drawn, o.filter_kwh);
  if (kept.size() < 2) throw DataError("fewer than 2 micro-trips survive the energy filter");
  std::vector<FeatureVector> rows;
  rows.reserve(kept.size());
  for (const auto& m : kept) rows.push_back(labeled_features(m));
  if (o.label_noise > 0.0) {
    double mean = 0.0;
    for (const auto& r : rows) mean += *r.label_energy;
    mean /= static_cast<double>(rows.size());
    synth::add_label_noise(rows, o.label_noise * std::abs(mean), derive_seed(g.seed, 2));
  }
  const auto split = split_dataset(rows, o.split, derive_seed(g.seed, 3));
  write_features(in_dir(g, "features.csv"), rows);
  write_features(in_dir(g, "train.csv"), split.train);
  write_features(in_dir(g, "test.csv"), split.test);
  nlohmann::json stats{{"micro_trips_drawn", drawn.size()},
                       {"micro_trips_kept", kept.size()},
                       {"train_rows", split.train.size()},
                       {"test_rows", split.test.size()},
                       {"descriptive", stats_to_json(descriptive_stats(rows))}};
  write_json(in_dir(g, "stats.json"), stats);
  out << "kept " << kept.size() << " of " << drawn.size() << " micro-trips (" << split.train.size() << " train, "
      << split.test.size() << " test)\n";
  return {"features.csv", "train.csv", "test.csv", "stats.json"};
}

inline std::vector<std::string> cmd_train(const GlobalOptions& g, const TrainOptions& o, std::ostream& out) {
  const auto kind = model_kind_from_name(o.model);
  if (!kind) throw std::invalid_argument("unknown model '" + o.model + "' (expected prob-wu, prob or det)");
  TrainConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.elbo_samples = o.elbo_samples;
  cfg.kl_scale = o.kl_scale;
  cfg.initial_sigma = o.initial_sigma;
  cfg.prior = {o.prior_mean, o.prior_std};
  cfg.init_output_bias = !o.no_head_init;
  cfg.seed = g.seed;
  const auto rows = load_features(o.features);
  for (const auto& r : rows) {
    if (!r.label_energy) throw DataError("training rows need an energy_kwh label: " + o.features);
  }
  const std::span<const Feature> inputs =
      o.no_driver_behaviour ? std::span<const Feature>(kNonDriverFeatures) : std::span<const Feature>(kAllFeatures);
  const auto model = train(rows, *kind, cfg, inputs);
  for (auto f : model.scaler.constant_features()) {
    if (std::find(inputs.begin(), inputs.end(), f) == inputs.end()) continue;
    out << "warning: feature " << feature_name(f) << " is constant in the training rows and scales to 0\n";
  }
  save_model(in_dir(g, "model.json"), model);
  write_loss_history(in_dir(g, "loss_history.csv"), model.log);
  out << "trained " << o.model << " on " << rows.size() << " rows, final loss "
      << csv::format_double(model.log.final_loss().value_or(0.0)) << '\n';
  return {"model.json", "loss_history.csv"};
}

inline std::vector<std::string> cmd_predict(const GlobalOptions& g, const PredictOptions& o, std::ostream& out) {
  const auto model = load_model(o.model);
  const auto rows = load_features(o.features);
  require(!rows.empty(), "no rows to predict");
  std::vector<GaussianPrediction> preds;
  if (model.probabilistic()) {
    preds = predict_posterior(model, rows, o.samples, g.seed, parse_aggregation(o.aggregation));
  } else {
    for (double mu : predict_point(model, rows, o.samples, g.seed)) preds.push_back({mu, 0.0, {}});
  }
  write_predictions_csv(in_dir(g, "predictions.csv"), preds, o.level, o.samples, g.seed);
  out << "wrote " << preds.size() << " predictions\n";
  return {"predictions.csv"};
}

inline std::vector<SweepCurve> run_sweeps(const GlobalOptions& g, const PredictOptions& o, const TrainedModel& model,
                                          std::span<const FeatureVector> rows) {
  require(o.sweep.size() == o.grid.size(), "each --sweep needs a matching --grid");
  require(model.probabilistic(), "sweeps need a probabilistic model");
  const auto baseline = median_baseline(rows);
  std::vector<SweepCurve> curves;
  for (std::size_t i = 0; i < o.sweep.size(); ++i) {
    curves.push_back(sensitivity_sweep(model, o.sweep[i], parse_grid(o.grid[i]), baseline, o.samples,
                                       derive_seed(g.seed, 2, i), o.level, parse_aggregation(o.aggregation)));
  }
  return curves;
}

inline std::vector<SweepCurve> run_sweeps_or_empty(const GlobalOptions& g, const PredictOptions& o,
                                                   const TrainedModel& model, std::span<const FeatureVector> rows) {
  if (o.sweep.empty() && o.grid.empty()) return {};
  return run_sweeps(g, o, model, rows);
}

inline std::vector<FeatureVector> labeled_rows(const std::string& path) {
  auto rows = load_features(path);
  require(rows.size() >= 2, "evaluation needs at least 2 rows");
  for (const auto& r : rows) {
    if (!r.label_energy) throw DataError("evaluation rows need an energy_kwh label: " + path);
  }
  return rows;
}

inline std::vector<std::string> cmd_evaluate(const GlobalOptions& g, const PredictOptions& o, std::ostream& out) {
  const auto model = load_model(o.model);
  const auto rows = labeled_rows(o.features);
  auto report = evaluate(model, rows, o.samples, derive_seed(g.seed, 0), parse_aggregation(o.aggregation));
  if (o.importance) report.importance = permutation_importance(model, rows, o.repeats, derive_seed(g.seed, 1), o.samples);
  report.sweeps = run_sweeps_or_empty(g, o, model, rows);
  std::vector<std::string> files{"report.json"};
  write_json(in_dir(g, "report.json"), report_to_json(report));
  if (!report.sweeps.empty()) {
    write_sweep_csv(in_dir(g, "sweep.csv"), report.sweeps);
    files.push_back("sweep.csv");
  }
  out << "mape " << csv::format_double(report.mape) << "% rmse " << csv::format_double(report.rmse) << " kWh";
  if (report.coverage_95) out << " coverage_95 " << csv::format_double(*report.coverage_95);
  out << '\n';
  return files;
}

inline std::vector<std::string> cmd_importance(const GlobalOptions& g, const PredictOptions& o, std::ostream& out) {
  const auto model = load_model(o.model);
  const auto rows = labeled_rows(o.features);
  const auto imp = permutation_importance(model, rows, o.repeats, derive_seed(g.seed, 1), o.samples);
  write_json(in_dir(g, "importance.json"), importance_to_json(imp));
  for (auto f : imp.ranking()) {
    out << feature_name(f) << ' ' << csv::format_double(imp.of(f).share_percent) << "%\n";
  }
  return {"importance.json"};
}

inline std::vector<std::string> cmd_sweep(const GlobalOptions& g, const PredictOptions& o, std::ostream& out) {
  require(!o.sweep.empty(), "sweep needs --feature");
  const auto model = load_model(o.model);
  const auto rows = load_features(o.features);
  require(!rows.empty(), "sweep needs baseline rows");
  const auto curves = run_sweeps(g, o, model, rows);
  write_sweep_csv(in_dir(g, "sweep.csv"), curves);
  std::size_t points = 0;
  for (const auto& c : curves) points += c.points.size();
  out << "wrote " << points << " sweep points\n";
  return {"sweep.csv"};
}

}  // namespace detail

/// Parses and runs one command. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Probabilistic EV trip-energy estimation"};
  app.name("evprob");
  app.require_subcommand(1, 1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option values (a previous manifest.json works)");

  Registry reg;
  GlobalOptions g;
  reg.option(&app, "seed", g.seed, "Random seed");
  reg.option(&app, "out-dir", g.out_dir, "Directory for outputs and manifest.json");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate synthetic trip traces with a known energy law");
  reg.option(synth, "trips", so.trips, "Number of traces");
  reg.option(synth, "min-duration", so.min_duration, "Shortest trace, seconds");
  reg.option(synth, "max-duration", so.max_duration, "Longest trace, seconds");
  reg.option(synth, "power-noise-w", so.power_noise_w, "Per-second power noise std, W");
  reg.option(synth, "temp-coef", so.temp_coef, "Auxiliary draw per degree F below the reference, W");

  IngestOptions io;
  auto* ingest = app.add_subcommand("ingest", "Trace CSV to micro-trip feature CSVs with a train/test split");
  reg.option(ingest, "traces", io.traces, "Trace CSV")->required();
  reg.option(ingest, "count", io.count, "Micro-trips to draw");
  reg.option(ingest, "filter-kwh", io.filter_kwh, "Drop micro-trips with |energy| below this, kWh");
  reg.option(ingest, "min-length", io.min_length, "Shortest micro-trip, samples");
  reg.option(ingest, "max-length", io.max_length, "Longest micro-trip, samples (0 = rest of trip)");
  reg.option(ingest, "split", io.split, "Training fraction");
  reg.option(ingest, "label-noise", io.label_noise, "Label noise std as a fraction of mean energy");

  TrainOptions to;
  auto* trainc = app.add_subcommand("train", "Train a prob-wu, prob or det model");
  reg.option(trainc, "features", to.features, "Training features CSV")->required();
  reg.option(trainc, "model", to.model, "prob-wu | prob | det");
  reg.option(trainc, "lr", to.lr, "Adam learning rate");
  reg.option(trainc, "epochs", to.epochs, "Training epochs");
  reg.option(trainc, "batch-size", to.batch_size, "Mini-batch size (0 = full batch)");
  reg.option(trainc, "elbo-samples", to.elbo_samples, "Weight samples per ELBO evaluation");
  reg.option(trainc, "kl-scale", to.kl_scale, "Multiplier on the KL term");
  reg.option(trainc, "initial-sigma", to.initial_sigma, "Initial posterior std of variational weights");
  reg.option(trainc, "prior-mean", to.prior_mean, "Gaussian weight prior mean");
  reg.option(trainc, "prior-std", to.prior_std, "Gaussian weight prior std");
  reg.flag(trainc, "no-driver-behaviour", to.no_driver_behaviour, "Drop rpa, avg_accel and avg_decel inputs");
  reg.flag(trainc, "no-head-init", to.no_head_init, "Do not start the output bias at the label mean/std");

  auto add_model_io = [&](CLI::App* sub, PredictOptions& p) {
    reg.option(sub, "model", p.model, "Model file")->required();
    reg.option(sub, "features", p.features, "Features CSV")->required();
    reg.option(sub, "samples", p.samples, "Monte Carlo weight samples M");
  };
  auto add_interval = [&](CLI::App* sub, PredictOptions& p) {
    reg.option(sub, "level", p.level, "Confidence level");
    reg.option(sub, "aggregation", p.aggregation, "average | mixture");
  };

  PredictOptions po;
  auto* predict = app.add_subcommand("predict", "Predictive mean, std and interval per row");
  add_model_io(predict, po);
  add_interval(predict, po);

  PredictOptions eo;
  auto* evalc = app.add_subcommand("evaluate", "MAPE, RMSE and coverage on labeled rows");
  add_model_io(evalc, eo);
  add_interval(evalc, eo);
  reg.flag(evalc, "importance", eo.importance, "Add permutation importance");
  reg.option(evalc, "repeats", eo.repeats, "Shuffles per feature");
  reg.option(evalc, "sweep", eo.sweep, "Feature to sweep (repeatable)");
  reg.option(evalc, "grid", eo.grid, "start:stop:step for the matching --sweep (repeatable)");

  PredictOptions mo;
  auto* importance = app.add_subcommand("importance", "Permutation feature importance");
  add_model_io(importance, mo);
  reg.option(importance, "repeats", mo.repeats, "Shuffles per feature");

  PredictOptions wo;
  auto* sweep = app.add_subcommand("sweep", "Energy-per-km sweep of one feature around the median row");
  add_model_io(sweep, wo);
  add_interval(sweep, wo);
  reg.option(sweep, "feature", wo.sweep, "Feature to sweep (repeatable)")->required();
  reg.option(sweep, "grid", wo.grid, "start:stop:step (repeatable)")->required();

  for (auto* sub : {synth, ingest, trainc, predict, evalc, importance, sweep}) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    std::filesystem::create_directories(g.out_dir);
    std::vector<std::string> files;
    if (chosen == synth) files = detail::cmd_synth(g, so, out);
    if (chosen == ingest) files = detail::cmd_ingest(g, io, out);
    if (chosen == trainc) files = detail::cmd_train(g, to, out);
    if (chosen == predict) files = detail::cmd_predict(g, po, out);
    if (chosen == evalc) files = detail::cmd_evaluate(g, eo, out);
    if (chosen == importance) files = detail::cmd_importance(g, mo, out);
    if (chosen == sweep) files = detail::cmd_sweep(g, wo, out);

    nlohmann::json manifest = reg.values(&app);
    manifest["format"] = "evprob-manifest";
    manifest["version"] = kManifestVersion;
    manifest["command"] = command;
    manifest[command] = reg.values(chosen);
    manifest["outputs"] = files;
    write_json(detail::in_dir(g, "manifest.json"), manifest);
    return kOk;
  } catch (const NumericError& e) {
    err << "evprob " << command << ": numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    err << "evprob " << command << ": data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    err << "evprob " << command << ": invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "evprob " << command << ": data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "evprob " << command << ": data error: " << e.what() << '\n';
    return kData;
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"evprob"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace evprob::cli
