#pragma once

// Minimal MLP engine: deterministic and variational dense layers, a
// layer-level forward tape, reverse-mode gradients, and Monte Carlo KL terms.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "evprob/error.hpp"
#include "evprob/rng.hpp"

namespace evprob::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

enum class Activation { Linear, Relu, LeakyRelu, Tanh };

inline constexpr double kLeakySlope = 0.01;

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
    case Activation::Linear: break;
  }
  return "linear";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "linear") return Activation::Linear;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "tanh") return Activation::Tanh;
  throw DataError("unknown activation '" + name + "'");
}

/// ln(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Derivative of softplus.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double inverse_softplus(double y) {
  require(y > 0.0, "inverse_softplus needs y > 0");
  return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

/// log N(x | mean, std^2).
inline double gaussian_log_density(double x, double mean, double std) {
  if (!(std > 0.0)) throw std::invalid_argument("gaussian_log_density: std must be > 0");
  const double z = (x - mean) / std;
  return -std::log(std) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
}

struct PriorSpec {
  double mean = 0.0;
  double std = 1.0;
};

/// Point weights. `weight` is (in x out), applied as x * W + b.
struct DenseParams {
  Matrix weight;
  RowVector bias;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.cols()); }
};

/// Standard-normal draws for one variational layer.
struct LayerNoise {
  Matrix weight;
  RowVector bias;

  bool empty() const { return weight.size() == 0 && bias.size() == 0; }
};

/// Factorized Gaussian posterior: each parameter is N(mu, softplus(rho)^2).
struct VariationalParams {
  Matrix weight_mu;
  Matrix weight_rho;
  RowVector bias_mu;
  RowVector bias_rho;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight_mu.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight_mu.cols()); }

  DenseParams mean() const { return DenseParams{weight_mu, bias_mu}; }
};

/// Reparameterized draw w = mu + softplus(rho) * eps.
inline DenseParams variational_sample(const VariationalParams& p, const LayerNoise& noise) {
  if (noise.weight.rows() != p.weight_mu.rows() || noise.weight.cols() != p.weight_mu.cols() ||
      noise.bias.size() != p.bias_mu.size()) {
    throw std::invalid_argument("variational_sample: noise shape does not match parameters");
  }
  DenseParams out;
  out.weight = p.weight_mu + (p.weight_rho.unaryExpr(&softplus).array() * noise.weight.array()).matrix();
  out.bias = p.bias_mu + (p.bias_rho.unaryExpr(&softplus).array() * noise.bias.array()).matrix();
  return out;
}

struct Layer {
  std::variant<DenseParams, VariationalParams> params;
  Activation activation = Activation::Relu;

  bool is_variational() const { return std::holds_alternative<VariationalParams>(params); }
  const DenseParams& dense() const { return std::get<DenseParams>(params); }
  const VariationalParams& variational() const { return std::get<VariationalParams>(params); }

  std::size_t in_dim() const {
    return std::visit([](const auto& p) { return p.in_dim(); }, params);
  }
  std::size_t out_dim() const {
    return std::visit([](const auto& p) { return p.out_dim(); }, params);
  }
};

struct Network {
  std::vector<Layer> layers;
  PriorSpec prior;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  bool has_variational() const {
    for (const auto& l : layers) {
      if (l.is_variational()) return true;
    }
    return false;
  }
};

inline void apply_activation(Matrix& z, Activation a) {
  switch (a) {
    case Activation::Relu: z = z.cwiseMax(0.0); break;
    case Activation::LeakyRelu: z = (z.array() > 0.0).select(z, kLeakySlope * z); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
    case Activation::Linear: break;
  }
}

/// Multiplies `delta` by the activation derivative at `pre`.
inline void activation_backward(Matrix& delta, const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::Relu: delta = (pre.array() > 0.0).select(delta, 0.0); break;
    case Activation::LeakyRelu: delta = (pre.array() > 0.0).select(delta, kLeakySlope * delta); break;
    case Activation::Tanh: delta = (delta.array() * (1.0 - pre.array().tanh().square())).matrix(); break;
    case Activation::Linear: break;
  }
}

/// Batched dense layer: rows of `x` are samples.
inline Matrix dense_forward(const DenseParams& p, const Matrix& x, Activation activation) {
  if (static_cast<std::size_t>(x.cols()) != p.in_dim()) {
    throw std::invalid_argument("dense_forward: input has " + std::to_string(x.cols()) +
                                " columns, layer expects " + std::to_string(p.in_dim()));
  }
  if (p.bias.size() != p.weight.cols()) throw std::invalid_argument("dense_forward: bias size mismatch");
  Matrix z = x * p.weight;
  z.rowwise() += p.bias;
  apply_activation(z, activation);
  return z;
}

/// Single-sample dense layer.
inline Vector dense_forward(const DenseParams& p, const Vector& x, Activation activation) {
  const Matrix row = x.transpose();
  return dense_forward(p, row, activation).row(0).transpose();
}

// Noise

/// One LayerNoise per layer; deterministic layers get an empty entry.
using NetworkNoise = std::vector<LayerNoise>;

inline NetworkNoise zero_noise(const Network& net) {
  NetworkNoise noise(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (!net.layers[i].is_variational()) continue;
    const auto& v = net.layers[i].variational();
    noise[i].weight = Matrix::Zero(v.weight_mu.rows(), v.weight_mu.cols());
    noise[i].bias = RowVector::Zero(v.bias_mu.size());
  }
  return noise;
}

/// Draws eps ~ N(0, 1) for every variational parameter, layer by layer,
/// weights (row-major) before biases.
inline NetworkNoise draw_noise(const Network& net, Rng& rng) {
  NetworkNoise noise = zero_noise(net);
  for (auto& n : noise) {
    for (Eigen::Index i = 0; i < n.weight.size(); ++i) n.weight.data()[i] = standard_normal(rng);
    for (Eigen::Index i = 0; i < n.bias.size(); ++i) n.bias[i] = standard_normal(rng);
  }
  return noise;
}

/// Point weights of every layer under the given noise.
inline std::vector<DenseParams> realize(const Network& net, const NetworkNoise& noise) {
  if (noise.size() != net.layers.size()) throw std::invalid_argument("noise does not match network depth");
  std::vector<DenseParams> out;
  out.reserve(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    out.push_back(layer.is_variational() ? variational_sample(layer.variational(), noise[i]) : layer.dense());
  }
  return out;
}

// Forward tape

struct LayerRecord {
  Matrix input;
  Matrix pre_activation;
  DenseParams weights;
};

/// Activations, sampled weights and noise recorded by a forward pass, in
/// layer order. backward() replays it in reverse.
struct Tape {
  std::vector<LayerRecord> layers;
  NetworkNoise noise;

  bool recorded() const { return !layers.empty(); }
  void clear() {
    layers.clear();
    noise.clear();
  }
};

inline Matrix forward(const Network& net, const Matrix& x, const NetworkNoise& noise, Tape* tape = nullptr) {
  const auto weights = realize(net, noise);
  if (tape) {
    tape->clear();
    tape->noise = noise;
    tape->layers.reserve(net.layers.size());
  }
  Matrix h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& w = weights[i];
    if (static_cast<std::size_t>(h.cols()) != w.in_dim()) {
      throw std::invalid_argument("forward: layer " + std::to_string(i) + " expects " +
                                  std::to_string(w.in_dim()) + " inputs, got " + std::to_string(h.cols()));
    }
    Matrix z = h * w.weight;
    z.rowwise() += w.bias;
    Matrix a = z;
    apply_activation(a, net.layers[i].activation);
    if (tape) tape->layers.push_back(LayerRecord{std::move(h), std::move(z), w});
    h = std::move(a);
  }
  return h;
}

/// Forward pass with every variational layer at its mean.
inline Matrix forward_mean(const Network& net, const Matrix& x) { return forward(net, x, zero_noise(net)); }

// Gradients

/// Parameter-shaped gradient container; variational layers get gradients
/// for (mu, rho).
struct Gradients {
  std::vector<std::variant<DenseParams, VariationalParams>> layers;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (const auto& layer : net.layers) {
      if (layer.is_variational()) {
        const auto& v = layer.variational();
        g.layers.emplace_back(VariationalParams{Matrix::Zero(v.weight_mu.rows(), v.weight_mu.cols()),
                                                Matrix::Zero(v.weight_mu.rows(), v.weight_mu.cols()),
                                                RowVector::Zero(v.bias_mu.size()),
                                                RowVector::Zero(v.bias_mu.size())});
      } else {
        const auto& d = layer.dense();
        g.layers.emplace_back(DenseParams{Matrix::Zero(d.weight.rows(), d.weight.cols()),
                                          RowVector::Zero(d.bias.size())});
      }
    }
    return g;
  }

  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
};

inline Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw std::invalid_argument("gradient shape mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (auto* v = std::get_if<VariationalParams>(&layers[i])) {
      const auto& o = std::get<VariationalParams>(other.layers[i]);
      v->weight_mu += o.weight_mu;
      v->weight_rho += o.weight_rho;
      v->bias_mu += o.bias_mu;
      v->bias_rho += o.bias_rho;
    } else {
      auto& d = std::get<DenseParams>(layers[i]);
      const auto& o = std::get<DenseParams>(other.layers[i]);
      d.weight += o.weight;
      d.bias += o.bias;
    }
  }
  return *this;
}

inline Gradients& Gradients::operator*=(double s) {
  for (auto& layer : layers) {
    if (auto* v = std::get_if<VariationalParams>(&layer)) {
      v->weight_mu *= s;
      v->weight_rho *= s;
      v->bias_mu *= s;
      v->bias_rho *= s;
    } else {
      auto& d = std::get<DenseParams>(layer);
      d.weight *= s;
      d.bias *= s;
    }
  }
  return *this;
}

/// Reverse-mode pass over a recorded tape. `upstream` is dLoss/dOutput with
/// the same shape as the network output. Variational parameters receive
/// dL/dmu = dL/dw and dL/drho = dL/dw * eps * sigmoid(rho).
inline Gradients backward(const Network& net, const Tape& tape, const Matrix& upstream) {
  if (!tape.recorded()) throw std::logic_error("backward called before a recorded forward pass");
  if (tape.layers.size() != net.layers.size()) throw std::logic_error("tape does not match network");
  const auto& last = tape.layers.back().pre_activation;
  if (upstream.rows() != last.rows() || upstream.cols() != last.cols()) {
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  }

  Gradients grads = Gradients::zeros_like(net);
  Matrix delta = upstream;  // dL/d(layer output)
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& rec = tape.layers[k];
    activation_backward(delta, rec.pre_activation, net.layers[k].activation);
    const Matrix d_weight = rec.input.transpose() * delta;
    const RowVector d_bias = delta.colwise().sum();
    if (k > 0) delta = delta * rec.weights.weight.transpose();

    if (auto* v = std::get_if<VariationalParams>(&grads.layers[k])) {
      const auto& p = net.layers[k].variational();
      const auto& eps = tape.noise[k];
      v->weight_mu = d_weight;
      v->bias_mu = d_bias;
      v->weight_rho = (d_weight.array() * eps.weight.array() * p.weight_rho.unaryExpr(&sigmoid).array()).matrix();
      v->bias_rho = (d_bias.array() * eps.bias.array() * p.bias_rho.unaryExpr(&sigmoid).array()).matrix();
    } else {
      auto& d = std::get<DenseParams>(grads.layers[k]);
      d.weight = d_weight;
      d.bias = d_bias;
    }
  }
  return grads;
}

/// Single-sample Monte Carlo estimate of KL(q || p) for the drawn weights:
/// sum over variational parameters of log q(w | mu, sigma) - log p(w).
/// When `grads` is given, adds scale * d/d(mu, rho) of that estimate, taken
/// pathwise through w = mu + sigma * eps with eps held fixed.
inline double kl_sample(const Network& net, const NetworkNoise& noise, Gradients* grads = nullptr,
                        double scale = 1.0) {
  if (noise.size() != net.layers.size()) throw std::invalid_argument("noise does not match network depth");
  const PriorSpec& prior = net.prior;
  require(prior.std > 0.0, "prior std must be > 0");
  const double prior_var = prior.std * prior.std;

  double total = 0.0;
  auto accumulate = [&](const double* mu, const double* rho, const double* eps, Eigen::Index n, double* g_mu,
                        double* g_rho) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sigma = softplus(rho[i]);
      const double w = mu[i] + sigma * eps[i];
      total += gaussian_log_density(w, mu[i], sigma) - gaussian_log_density(w, prior.mean, prior.std);
      if (g_mu) {
        // log q(w) = -ln sigma - eps^2/2 + const: no mu dependence, d/drho = -sigmoid(rho)/sigma.
        // -log p(w): d/dw = (w - prior_mean)/prior_var.
        const double dw = (w - prior.mean) / prior_var;
        g_mu[i] += scale * dw;
        g_rho[i] += scale * (dw * eps[i] * sigmoid(rho[i]) - sigmoid(rho[i]) / sigma);
      }
    }
  };

  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    if (!net.layers[k].is_variational()) continue;
    const auto& p = net.layers[k].variational();
    const auto& eps = noise[k];
    VariationalParams* g = grads ? &std::get<VariationalParams>(grads->layers[k]) : nullptr;
    accumulate(p.weight_mu.data(), p.weight_rho.data(), eps.weight.data(), p.weight_mu.size(),
               g ? g->weight_mu.data() : nullptr, g ? g->weight_rho.data() : nullptr);
    accumulate(p.bias_mu.data(), p.bias_rho.data(), eps.bias.data(), p.bias_mu.size(),
               g ? g->bias_mu.data() : nullptr, g ? g->bias_rho.data() : nullptr);
  }
  return total;
}

/// Closed-form KL(N(mu, s^2) || N(m, t^2)).
inline double gaussian_kl(double mu, double s, double m, double t) {
  return std::log(t / s) + (s * s + (mu - m) * (mu - m)) / (2.0 * t * t) - 0.5;
}

// Flat parameter views (layer order; weights row-major, then bias; for
// variational layers: weight_mu, weight_rho, bias_mu, bias_rho).

namespace detail {
template <class Params, class Fn>
void for_each_block(Params& layers, Fn&& fn) {
  for (auto& layer : layers) {
    std::visit(
        [&](auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, VariationalParams>) {
            fn(p.weight_mu.data(), p.weight_mu.size());
            fn(p.weight_rho.data(), p.weight_rho.size());
            fn(p.bias_mu.data(), p.bias_mu.size());
            fn(p.bias_rho.data(), p.bias_rho.size());
          } else {
            fn(p.weight.data(), p.weight.size());
            fn(p.bias.data(), p.bias.size());
          }
        },
        layer);
  }
}
}  // namespace detail

inline std::size_t parameter_count(const Network& net) {
  std::size_t n = 0;
  for (const auto& layer : net.layers) {
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, VariationalParams>) {
            n += 2 * static_cast<std::size_t>(p.weight_mu.size() + p.bias_mu.size());
          } else {
            n += static_cast<std::size_t>(p.weight.size() + p.bias.size());
          }
        },
        layer.params);
  }
  return n;
}

inline Vector flatten(const Network& net) {
  Vector out(static_cast<Eigen::Index>(parameter_count(net)));
  Eigen::Index pos = 0;
  auto copy = [&](const double* data, Eigen::Index n) {
    std::copy(data, data + n, out.data() + pos);
    pos += n;
  };
  for (const auto& layer : net.layers) {
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, VariationalParams>) {
            copy(p.weight_mu.data(), p.weight_mu.size());
            copy(p.weight_rho.data(), p.weight_rho.size());
            copy(p.bias_mu.data(), p.bias_mu.size());
            copy(p.bias_rho.data(), p.bias_rho.size());
          } else {
            copy(p.weight.data(), p.weight.size());
            copy(p.bias.data(), p.bias.size());
          }
        },
        layer.params);
  }
  return out;
}

inline Vector flatten(const Gradients& grads) {
  Eigen::Index total = 0;
  detail::for_each_block(grads.layers, [&](const double*, Eigen::Index n) { total += n; });
  Vector out(total);
  Eigen::Index pos = 0;
  detail::for_each_block(grads.layers, [&](const double* data, Eigen::Index n) {
    std::copy(data, data + n, out.data() + pos);
    pos += n;
  });
  return out;
}

inline void assign(Network& net, const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count(net)) {
    throw std::invalid_argument("assign: flat parameter vector has wrong length");
  }
  Eigen::Index pos = 0;
  auto fill = [&](double* data, Eigen::Index n) {
    std::copy(flat.data() + pos, flat.data() + pos + n, data);
    pos += n;
  };
  for (auto& layer : net.layers) {
    std::visit(
        [&](auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, VariationalParams>) {
            fill(p.weight_mu.data(), p.weight_mu.size());
            fill(p.weight_rho.data(), p.weight_rho.size());
            fill(p.bias_mu.data(), p.bias_mu.size());
            fill(p.bias_rho.data(), p.bias_rho.size());
          } else {
            fill(p.weight.data(), p.weight.size());
            fill(p.bias.data(), p.bias.size());
          }
        },
        layer.params);
  }
}

// Initialization

enum class InitScheme { HeUniform, GlorotUniform };

struct InitConfig {
  double initial_sigma = 0.05;
  InitScheme scheme = InitScheme::HeUniform;
};

/// He-style uniform init for weights (limit sqrt(6 / fan_in)), zero biases,
/// rho set so softplus(rho) = initial_sigma.
inline Layer make_layer(std::size_t in, std::size_t out, bool variational, Activation activation, Rng& rng,
                        const InitConfig& init = {}) {
  require(in > 0 && out > 0, "layer dimensions must be positive");
  const double fan = init.scheme == InitScheme::HeUniform ? static_cast<double>(in) : static_cast<double>(in + out);
  const double limit = std::sqrt(6.0 / fan);
  Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
  RowVector b = RowVector::Zero(static_cast<Eigen::Index>(out));
  if (!variational) return Layer{DenseParams{std::move(w), std::move(b)}, activation};
  const double rho = inverse_softplus(init.initial_sigma);
  VariationalParams v{w, Matrix::Constant(w.rows(), w.cols(), rho), b, RowVector::Constant(b.size(), rho)};
  return Layer{std::move(v), activation};
}

}  // namespace evprob::nn
