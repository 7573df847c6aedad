#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evprob/adam.hpp"
#include "evprob/csv.hpp"
#include "evprob/error.hpp"
#include "evprob/features.hpp"
#include "evprob/nn.hpp"
#include "evprob/nn_io.hpp"
#include "evprob/rng.hpp"

namespace evprob {

/// The three MLP variants: Gaussian head with weight uncertainty in the last
/// two layers, Gaussian head with point weights, and a single-output
/// regressor.
enum class ModelKind { ProbWithUncertainty, Probabilistic, Deterministic };

inline std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::ProbWithUncertainty: return "prob-wu";
    case ModelKind::Probabilistic: return "prob";
    case ModelKind::Deterministic: return "det";
  }
  return "?";
}

inline std::optional<ModelKind> model_kind_from_name(std::string_view name) {
  if (name == "prob-wu") return ModelKind::ProbWithUncertainty;
  if (name == "prob") return ModelKind::Probabilistic;
  if (name == "det") return ModelKind::Deterministic;
  return std::nullopt;
}

inline constexpr double kSigmaFloor = 1e-6;

struct NetworkSpec {
  std::size_t input_dim = kFeatureCount;
  std::vector<std::size_t> hidden{32, 64, 32, 8};
  std::size_t output_units = 2;
  /// Indices of dense transforms (0 = input layer, hidden.size() = output)
  /// that carry Gaussian weight posteriors.
  std::vector<std::size_t> variational_layers{3, 4};
  nn::Activation hidden_activation = nn::Activation::Relu;

  std::size_t transform_count() const { return hidden.size() + 1; }

  static NetworkSpec for_kind(ModelKind kind, std::size_t input_dim = kFeatureCount) {
    NetworkSpec s;
    s.input_dim = input_dim;
    switch (kind) {
      case ModelKind::ProbWithUncertainty: break;
      case ModelKind::Probabilistic: s.variational_layers.clear(); break;
      case ModelKind::Deterministic:
        s.variational_layers.clear();
        s.output_units = 1;
        break;
    }
    return s;
  }

  void validate() const {
    require(input_dim >= 1, "network input_dim must be >= 1");
    require(output_units == 1 || output_units == 2, "output units must be 1 or 2");
    for (auto h : hidden) require(h >= 1, "hidden layer sizes must be >= 1");
    for (auto v : variational_layers) {
      require(v < transform_count(), "variational layer index " + std::to_string(v) + " out of range");
    }
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 400;
  std::size_t elbo_samples = 1;
  double kl_scale = 1.0;       // multiplies the per-step KL weight 1/num_batches
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  nn::PriorSpec prior{};
  double initial_sigma = 0.05;
  bool init_output_bias = true;  // start the head at the label mean / std

  void validate() const {
    require(learning_rate > 0.0, "learning rate must be > 0");
    require(elbo_samples >= 1, "ELBO sample count must be >= 1");
    require(kl_scale >= 0.0, "KL scale must be >= 0");
    require(prior.std > 0.0, "prior std must be > 0");
    require(initial_sigma > 0.0, "initial sigma must be > 0");
  }
};

/// Builds the MLP: ReLU hidden layers, linear output, designated transforms
/// variational.
inline nn::Network build_network(const NetworkSpec& spec, std::uint64_t seed, const nn::PriorSpec& prior = {},
                                 const nn::InitConfig& init = {}) {
  spec.validate();
  Rng rng = make_rng(seed, 0);
  nn::Network net;
  net.prior = prior;
  std::size_t in = spec.input_dim;
  for (std::size_t k = 0; k < spec.transform_count(); ++k) {
    const bool is_output = k == spec.hidden.size();
    const std::size_t out = is_output ? spec.output_units : spec.hidden[k];
    const bool variational =
        std::find(spec.variational_layers.begin(), spec.variational_layers.end(), k) != spec.variational_layers.end();
    net.layers.push_back(
        nn::make_layer(in, out, variational, is_output ? nn::Activation::Linear : spec.hidden_activation, rng, init));
    in = out;
  }
  return net;
}

struct HeadOutput {
  double mu = 0.0;
  double sigma = 0.0;
};

/// mu = out[0], sigma = softplus(out[1]) + 1e-6.
inline HeadOutput predict_head(double out0, double out1) { return {out0, nn::softplus(out1) + kSigmaFloor}; }

inline HeadOutput predict_head(std::span<const double> out) {
  require(out.size() == 2, "probabilistic head needs 2 outputs");
  return predict_head(out[0], out[1]);
}

/// Gaussian negative log likelihood without the constant term:
/// sum_i ln(sigma_i) + (y_i - mu_i)^2 / (2 sigma_i^2).
inline double nll_loss(std::span<const double> mu, std::span<const double> sigma, std::span<const double> y) {
  require(mu.size() == sigma.size() && mu.size() == y.size(), "nll_loss: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw std::invalid_argument("nll_loss: sigma must be > 0");
    const double r = y[i] - mu[i];
    total += std::log(sigma[i]) + r * r / (2.0 * sigma[i] * sigma[i]);
  }
  return total;
}

struct HeadLoss {
  double loss = 0.0;
  nn::Matrix grad;  // dLoss / d(raw network output)
};

/// NLL of a two-unit raw output and its gradient w.r.t. the raw outputs.
inline HeadLoss nll_head(const nn::Matrix& out, const nn::Vector& y) {
  require(out.cols() == 2, "NLL head needs 2 output units");
  require(out.rows() == y.size(), "NLL head: batch/label size mismatch");
  HeadLoss h{0.0, nn::Matrix(out.rows(), 2)};
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto [mu, sigma] = predict_head(out(i, 0), out(i, 1));
    const double r = y[i] - mu;
    const double inv_var = 1.0 / (sigma * sigma);
    h.loss += std::log(sigma) + r * r / (2.0 * sigma * sigma);
    h.grad(i, 0) = -r * inv_var;
    h.grad(i, 1) = (1.0 / sigma - r * r * inv_var / sigma) * nn::sigmoid(out(i, 1));
  }
  return h;
}

/// Mean squared error of a single-unit output and its gradient.
inline HeadLoss mse_head(const nn::Matrix& out, const nn::Vector& y) {
  require(out.cols() == 1, "MSE head needs 1 output unit");
  require(out.rows() == y.size() && y.size() > 0, "MSE head: batch/label size mismatch");
  const double n = static_cast<double>(y.size());
  HeadLoss h{0.0, nn::Matrix(out.rows(), 1)};
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double r = out(i, 0) - y[i];
    h.loss += r * r / n;
    h.grad(i, 0) = 2.0 * r / n;
  }
  return h;
}

struct ElboResult {
  double loss = 0.0;  // nll + kl_weight * kl, averaged over samples
  double nll = 0.0;   // averaged over samples
  double kl = 0.0;    // sampled log q - log p, averaged over samples
  std::optional<nn::Gradients> grads;
  nn::Tape tape;  // tape of the last weight sample
};

/// Sampled ELBO for the given noise draws (one NetworkNoise per sample):
/// (1/N) sum_i [NLL(batch; W_i) + kl_weight * (log q(W_i) - log p(W_i))].
inline ElboResult elbo_loss(const nn::Network& net, const nn::Matrix& x, const nn::Vector& y,
                            std::span<const nn::NetworkNoise> samples, double kl_weight,
                            bool with_gradients = true) {
  if (!net.has_variational()) throw std::invalid_argument("elbo_loss: network has no variational layers");
  require(!samples.empty(), "elbo_loss needs at least one weight sample");
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  ElboResult r;
  if (with_gradients) r.grads = nn::Gradients::zeros_like(net);
  for (const auto& noise : samples) {
    const nn::Matrix out = nn::forward(net, x, noise, &r.tape);
    const HeadLoss head = nll_head(out, y);
    double kl = 0.0;
    if (with_gradients) {
      nn::Gradients g = nn::backward(net, r.tape, head.grad);
      kl = nn::kl_sample(net, noise, &g, kl_weight);
      g *= inv_n;
      *r.grads += g;
    } else {
      kl = nn::kl_sample(net, noise);
    }
    r.nll += head.loss * inv_n;
    r.kl += kl * inv_n;
  }
  r.loss = r.nll + kl_weight * r.kl;
  return r;
}

/// Draws `n_samples` weight sets from `rng` and evaluates the ELBO.
inline ElboResult elbo_loss(const nn::Network& net, const nn::Matrix& x, const nn::Vector& y,
                            std::size_t n_samples, double kl_weight, Rng& rng, bool with_gradients = true) {
  require(n_samples >= 1, "elbo_loss needs at least one weight sample");
  std::vector<nn::NetworkNoise> samples;
  samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) samples.push_back(nn::draw_noise(net, rng));
  return elbo_loss(net, x, y, samples, kl_weight, with_gradients);
}

struct TrainingLog {
  std::vector<double> epoch_loss;  // mean step loss per epoch
  std::size_t epochs_run = 0;
  std::size_t train_rows = 0;

  std::optional<double> final_loss() const {
    if (epoch_loss.empty()) return std::nullopt;
    return epoch_loss.back();
  }
};

struct TrainedModel {
  ModelKind kind = ModelKind::ProbWithUncertainty;
  NetworkSpec spec;
  nn::Network network;
  ScalingParams scaler;
  std::vector<Feature> inputs;
  TrainConfig config;
  TrainingLog log;

  bool probabilistic() const { return spec.output_units == 2; }
};

/// Scaled model inputs, one row per feature vector.
inline nn::Matrix design_matrix(const ScalingParams& scaler, std::span<const Feature> inputs,
                                std::span<const FeatureVector> rows) {
  nn::Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < inputs.size(); ++c) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = scale_value(scaler, inputs[c], rows[r][inputs[c]]);
    }
  }
  return x;
}

inline nn::Matrix design_matrix(const TrainedModel& model, std::span<const FeatureVector> rows) {
  return design_matrix(model.scaler, model.inputs, rows);
}

inline nn::Vector label_vector(std::span<const FeatureVector> rows) {
  nn::Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].label_energy) throw DataError("row " + std::to_string(i) + " has no energy label");
    y[static_cast<Eigen::Index>(i)] = *rows[i].label_energy;
  }
  return y;
}

namespace detail {

template <class Rows>
nn::Matrix take_rows(const Rows& m, std::span<const std::size_t> idx) {
  Rows out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline nn::Vector take(const nn::Vector& v, std::span<const std::size_t> idx) {
  nn::Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(idx[i])];
  return out;
}

}  // namespace detail

/// Sets the output-layer bias so the untrained network predicts the label
/// mean (and, for a Gaussian head, the label standard deviation).
inline void initialize_output_bias(nn::Network& net, const nn::Vector& y) {
  if (net.layers.empty() || y.size() == 0) return;
  const double mean = y.mean();
  const double var = (y.array() - mean).square().mean();
  const double std = std::max(std::sqrt(var), 1e-3);
  auto set = [&](nn::RowVector& bias) {
    bias[0] = mean;
    if (bias.size() == 2) bias[1] = nn::inverse_softplus(std);
  };
  auto& out = net.layers.back();
  if (out.is_variational()) {
    set(std::get<nn::VariationalParams>(out.params).bias_mu);
  } else {
    set(std::get<nn::DenseParams>(out.params).bias);
  }
}

/// One optimization objective evaluation for the model's loss family:
/// ELBO when the network has variational layers, NLL for a two-unit head,
/// MSE for a single output.
struct StepLoss {
  double loss = 0.0;
  nn::Gradients grads;
};

inline StepLoss step_loss(const nn::Network& net, const nn::Matrix& x, const nn::Vector& y,
                          std::size_t elbo_samples, double kl_weight, Rng& rng) {
  if (net.has_variational()) {
    auto r = elbo_loss(net, x, y, elbo_samples, kl_weight, rng, true);
    return {r.loss, std::move(*r.grads)};
  }
  nn::Tape tape;
  const nn::Matrix out = nn::forward(net, x, nn::zero_noise(net), &tape);
  const HeadLoss head = out.cols() == 2 ? nll_head(out, y) : mse_head(out, y);
  return {head.loss, nn::backward(net, tape, head.grad)};
}

/// Fits the scaler on `rows`, builds the network and runs `epochs` passes of
/// Adam. Deterministic given config.seed.
inline TrainedModel train(std::span<const FeatureVector> rows, ModelKind kind, const TrainConfig& config,
                          std::span<const Feature> inputs = kAllFeatures,
                          std::optional<NetworkSpec> spec_override = std::nullopt) {
  config.validate();
  require(!rows.empty(), "training set is empty");
  require(!inputs.empty(), "model needs at least one input feature");

  TrainedModel model;
  model.kind = kind;
  model.spec = spec_override.value_or(NetworkSpec::for_kind(kind, inputs.size()));
  require(model.spec.input_dim == inputs.size(), "network input_dim does not match the selected features");
  model.inputs.assign(inputs.begin(), inputs.end());
  model.config = config;
  model.scaler = fit_scaler(rows);
  model.network = build_network(model.spec, config.seed, config.prior, nn::InitConfig{config.initial_sigma});

  const nn::Matrix x = design_matrix(model, rows);
  const nn::Vector y = label_vector(rows);
  if (config.init_output_bias) initialize_output_bias(model.network, y);
  const std::size_t n = rows.size();
  const std::size_t batch = (config.batch_size == 0 || config.batch_size >= n) ? n : config.batch_size;
  const std::size_t num_batches = (n + batch - 1) / batch;
  const double kl_weight = config.kl_scale / static_cast<double>(num_batches);

  nn::OptimizerState opt(nn::AdamConfig{config.learning_rate});
  nn::Vector params = nn::flatten(model.network);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  model.log.train_rows = n;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (num_batches > 1) {
      Rng shuffle_rng = make_rng(derive_seed(config.seed, 2, epoch));
      shuffle(order.begin(), order.end(), shuffle_rng);
    }
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < num_batches; ++b, ++step) {
      Rng noise_rng = make_rng(derive_seed(config.seed, 1, step));
      StepLoss s;
      if (num_batches == 1) {
        s = step_loss(model.network, x, y, config.elbo_samples, kl_weight, noise_rng);
      } else {
        const std::size_t lo = b * batch;
        const std::size_t hi = std::min(n, lo + batch);
        const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
        s = step_loss(model.network, detail::take_rows(x, idx), detail::take(y, idx), config.elbo_samples,
                      kl_weight, noise_rng);
      }
      if (!std::isfinite(s.loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step + 1) + " (lr " + csv::format_double(config.learning_rate) + ")");
      }
      epoch_total += s.loss;
      nn::adam_step(opt, params, nn::flatten(s.grads));
      nn::assign(model.network, params);
    }
    model.log.epoch_loss.push_back(epoch_total / static_cast<double>(num_batches));
    ++model.log.epochs_run;
  }
  return model;
}

// Serialization

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},         {"elbo_samples", c.elbo_samples},
          {"kl_scale", c.kl_scale},           {"batch_size", c.batch_size}, {"seed", c.seed},
          {"prior_mean", c.prior.mean},       {"prior_std", c.prior.std},   {"initial_sigma", c.initial_sigma}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.elbo_samples = j.at("elbo_samples").get<std::size_t>();
  c.kl_scale = j.at("kl_scale").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.prior.mean = j.at("prior_mean").get<double>();
  c.prior.std = j.at("prior_std").get<double>();
  c.initial_sigma = j.at("initial_sigma").get<double>();
  return c;
}

inline nlohmann::json model_to_json(const TrainedModel& m) {
  nlohmann::json inputs = nlohmann::json::array();
  for (auto f : m.inputs) inputs.push_back(std::string(feature_name(f)));
  nlohmann::json j;
  j["format"] = "evprob-model";
  j["version"] = kModelFormatVersion;
  j["kind"] = std::string(model_kind_name(m.kind));
  j["spec"] = {{"input_dim", m.spec.input_dim},
               {"hidden", m.spec.hidden},
               {"output_units", m.spec.output_units},
               {"variational_layers", m.spec.variational_layers}};
  j["inputs"] = inputs;
  j["scaler"] = {{"min", std::vector<double>(m.scaler.min.begin(), m.scaler.min.end())},
                 {"max", std::vector<double>(m.scaler.max.begin(), m.scaler.max.end())}};
  j["train_config"] = train_config_to_json(m.config);
  j["network"] = nn::network_to_json(m.network, m.config.seed);
  j["training"] = {{"epochs_run", m.log.epochs_run},
                   {"train_rows", m.log.train_rows},
                   {"final_loss", m.log.final_loss() ? nlohmann::json(*m.log.final_loss()) : nlohmann::json()}};
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "evprob-model") throw DataError("not an evprob model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) throw DataError("unsupported model format version " + std::to_string(version));
    TrainedModel m;
    const auto kind = model_kind_from_name(j.at("kind").get<std::string>());
    if (!kind) throw DataError("unknown model kind");
    m.kind = *kind;
    const auto& s = j.at("spec");
    m.spec.input_dim = s.at("input_dim").get<std::size_t>();
    m.spec.hidden = s.at("hidden").get<std::vector<std::size_t>>();
    m.spec.output_units = s.at("output_units").get<std::size_t>();
    m.spec.variational_layers = s.at("variational_layers").get<std::vector<std::size_t>>();
    for (const auto& name : j.at("inputs")) {
      const auto f = feature_from_name(name.get<std::string>());
      if (!f) throw DataError("unknown input feature '" + name.get<std::string>() + "'");
      m.inputs.push_back(*f);
    }
    const auto mins = j.at("scaler").at("min").get<std::vector<double>>();
    const auto maxs = j.at("scaler").at("max").get<std::vector<double>>();
    if (mins.size() != kFeatureCount || maxs.size() != kFeatureCount) throw DataError("scaler must have 9 entries");
    std::copy(mins.begin(), mins.end(), m.scaler.min.begin());
    std::copy(maxs.begin(), maxs.end(), m.scaler.max.begin());
    m.config = train_config_from_json(j.at("train_config"));
    m.network = nn::network_from_json(j.at("network"));
    const auto& t = j.at("training");
    m.log.epochs_run = t.at("epochs_run").get<std::size_t>();
    m.log.train_rows = t.at("train_rows").get<std::size_t>();
    if (!t.at("final_loss").is_null()) m.log.epoch_loss.push_back(t.at("final_loss").get<double>());

    if (m.network.input_dim() != m.inputs.size() || m.network.layers.size() != m.spec.transform_count() ||
        m.network.output_dim() != m.spec.output_units) {
      throw DataError("model network does not match its spec");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model JSON: ") + e.what());
  }
}

inline void save_model(const std::string& path, const TrainedModel& m) {
  auto out = csv::open_output(path);
  out << model_to_json(m).dump(1) << '\n';
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return model_from_json(j);
}

inline void write_loss_history(const std::string& path, const TrainingLog& log) {
  auto out = csv::open_output(path);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    out << (e + 1) << ',' << csv::format_double(log.epoch_loss[e]) << '\n';
  }
}

}  // namespace evprob
