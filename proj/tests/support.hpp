#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "evprob/dataset.hpp"
#include "evprob/model.hpp"
#include "evprob/synth.hpp"

namespace evprob::testing {

/// Random network with at most 3 layers and 16 units, any mix of
/// deterministic and variational layers, 2-unit or 1-unit head.
inline nn::Network random_small_network(std::uint64_t seed, std::size_t* input_dim = nullptr) {
  Rng rng = make_rng(seed);
  const std::size_t depth = 1 + uniform_index(rng, 0, 2);
  const std::size_t in = 1 + uniform_index(rng, 0, 5);
  const std::size_t out = 1 + uniform_index(rng, 0, 1);
  nn::Network net;
  net.prior = {0.3 * standard_normal(rng), 0.5 + uniform01(rng)};
  const nn::Activation hidden[] = {nn::Activation::Tanh, nn::Activation::Relu, nn::Activation::LeakyRelu};
  std::size_t d = in;
  for (std::size_t k = 0; k < depth; ++k) {
    const bool last = k + 1 == depth;
    const std::size_t width = last ? out : 2 + uniform_index(rng, 0, 14);
    const bool variational = uniform01(rng) < 0.5;
    const auto act = last ? nn::Activation::Linear : hidden[uniform_index(rng, 0, 2)];
    net.layers.push_back(nn::make_layer(d, width, variational, act, rng, nn::InitConfig{0.1 + 0.5 * uniform01(rng)}));
    if (variational) {
      auto& v = std::get<nn::VariationalParams>(net.layers.back().params);
      for (Eigen::Index i = 0; i < v.bias_mu.size(); ++i) v.bias_mu[i] = 0.2 * standard_normal(rng);
      for (Eigen::Index i = 0; i < v.weight_rho.size(); ++i) v.weight_rho.data()[i] += 0.3 * standard_normal(rng);
    } else {
      auto& p = std::get<nn::DenseParams>(net.layers.back().params);
      for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = 0.2 * standard_normal(rng);
    }
    d = width;
  }
  if (out == 2) {
    // Keep the sigma unit near softplus^-1 of an O(1) scale, as training does;
    // a sigma on the 1e-6 floor makes central differences pure roundoff.
    const double rho = nn::inverse_softplus(0.5 + uniform01(rng));
    auto& last = net.layers.back().params;
    if (auto* v = std::get_if<nn::VariationalParams>(&last)) {
      v->bias_mu[1] = rho;
      v->weight_mu.col(1) *= 0.1;
      v->weight_rho.col(1).array() -= 2.0;
    } else {
      auto& p = std::get<nn::DenseParams>(last);
      p.bias[1] = rho;
      p.weight.col(1) *= 0.1;
    }
  }
  if (input_dim) *input_dim = in;
  return net;
}

/// Loss used by the gradient checks: with frozen noise for variational
/// networks the data term plus weighted KL, NLL for a 2-unit head and MSE for
/// a 1-unit head.
struct FrozenLoss {
  nn::Matrix x;
  nn::Vector y;
  std::vector<nn::NetworkNoise> noise;
  double kl_weight = 0.7;

  double value(const nn::Network& net) const {
    if (net.has_variational() && net.output_dim() == 2) return elbo_loss(net, x, y, noise, kl_weight, false).loss;
    if (net.has_variational()) {
      double total = 0.0;
      for (const auto& n : noise) total += mse_head(nn::forward(net, x, n), y).loss + kl_weight * nn::kl_sample(net, n);
      return total / static_cast<double>(noise.size());
    }
    const nn::Matrix out = nn::forward(net, x, nn::zero_noise(net));
    return out.cols() == 2 ? nll_head(out, y).loss : mse_head(out, y).loss;
  }

  nn::Vector gradient(const nn::Network& net) const {
    if (net.has_variational() && net.output_dim() == 2) {
      return nn::flatten(*elbo_loss(net, x, y, noise, kl_weight, true).grads);
    }
    if (net.has_variational()) {
      auto total = nn::Gradients::zeros_like(net);
      for (const auto& n : noise) {
        nn::Tape tape;
        const nn::Matrix out = nn::forward(net, x, n, &tape);
        auto g = nn::backward(net, tape, mse_head(out, y).grad);
        nn::kl_sample(net, n, &g, kl_weight);
        total += g;
      }
      total *= 1.0 / static_cast<double>(noise.size());
      return nn::flatten(total);
    }
    nn::Tape tape;
    const nn::Matrix out = nn::forward(net, x, nn::zero_noise(net), &tape);
    const HeadLoss h = out.cols() == 2 ? nll_head(out, y) : mse_head(out, y);
    return nn::flatten(nn::backward(net, tape, h.grad));
  }
};

/// True when some ReLU or leaky ReLU pre-activation of `row` lies within
/// `margin` of the kink under any of the noise draws.
inline bool near_kink(const nn::Network& net, const nn::Matrix& row, const std::vector<nn::NetworkNoise>& noise,
                      double margin) {
  for (const auto& n : noise) {
    nn::Tape tape;
    nn::forward(net, row, n, &tape);
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      const auto act = net.layers[k].activation;
      if (act != nn::Activation::Relu && act != nn::Activation::LeakyRelu) continue;
      if (tape.layers[k].pre_activation.cwiseAbs().minCoeff() < margin) return true;
    }
  }
  return false;
}

/// Five random rows and two frozen noise draws. Rows are redrawn until every
/// kinked pre-activation is at least 1e-3 from its kink, so a 1e-5 parameter
/// step never straddles one. The KL weight is one over the variational
/// parameter count, which keeps the KL term O(1) next to the data term as in
/// training; at O(100) nats its roundoff would swamp small gradients.
inline FrozenLoss random_loss(const nn::Network& net, std::size_t in, std::uint64_t seed) {
  Rng rng = make_rng(seed, 1);
  FrozenLoss l;
  for (int s = 0; s < 2; ++s) l.noise.push_back(nn::draw_noise(net, rng));
  const Eigen::Index rows = 5;
  l.x = nn::Matrix(rows, static_cast<Eigen::Index>(in));
  nn::Matrix row(1, static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < rows; ++i) {
    do {
      for (Eigen::Index j = 0; j < row.cols(); ++j) row(0, j) = standard_normal(rng);
    } while (near_kink(net, row, l.noise, 1e-3));
    l.x.row(i) = row;
  }
  l.y = nn::Vector(rows);
  for (Eigen::Index i = 0; i < rows; ++i) l.y[i] = standard_normal(rng);
  std::size_t variational = 0;
  for (const auto& layer : net.layers) {
    if (layer.is_variational()) variational += 2 * static_cast<std::size_t>(layer.variational().weight_mu.size() +
                                                                            layer.variational().bias_mu.size());
  }
  if (variational > 0) l.kl_weight = 1.0 / static_cast<double>(variational);
  return l;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
};

/// Central differences with step h on every parameter. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheck check_gradients(const nn::Network& net, const FrozenLoss& loss, double h = 1e-5,
                                 double floor = 1e-6) {
  const nn::Vector analytic = loss.gradient(net);
  nn::Vector params = nn::flatten(net);
  nn::Network probe = net;
  GradCheck out;
  out.parameters = static_cast<std::size_t>(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    nn::assign(probe, params);
    const double up = loss.value(probe);
    params[i] = saved - h;
    nn::assign(probe, params);
    const double down = loss.value(probe);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - numeric) / denom);
  }
  return out;
}

/// Labeled synthetic micro-trips: a fleet, micro-trips of 600-1800 s, the
/// 0.3 kWh filter, the first `rows` kept, then label noise with std equal to
/// noise_fraction of the mean energy.
struct SynthDataConfig {
  std::size_t trips = 60;
  std::size_t rows = 4000;
  std::size_t draws = 4600;
  double noise_fraction = 0.05;
  synth::FleetConfig fleet{};
};

inline std::vector<FeatureVector> synth_rows(const SynthDataConfig& c, std::uint64_t seed) {
  synth::FleetConfig fc = c.fleet;
  fc.trips = c.trips;
  const auto traces = synth::generate_fleet(fc, seed);
  auto micros = generate_micro_trips(traces, c.draws, {600, 1800}, derive_seed(seed, 7));
  micros = filter_micro_trips(micros, 0.3);
  std::vector<FeatureVector> rows;
  for (std::size_t i = 0; i < micros.size() && rows.size() < c.rows; ++i) rows.push_back(labeled_features(micros[i]));
  if (c.noise_fraction > 0.0) {
    double mean = 0.0;
    for (const auto& r : rows) mean += *r.label_energy;
    mean /= static_cast<double>(rows.size());
    synth::add_label_noise(rows, c.noise_fraction * std::abs(mean), derive_seed(seed, 8));
  }
  return rows;
}


/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("evprob_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace evprob::testing
