#pragma once

#include <cmath>
#include <stdexcept>

#include "evprob/nn.hpp"

namespace evprob::nn {

struct AdamConfig {
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  Vector first_moment;
  Vector second_moment;
  long step = 0;

  explicit OptimizerState(AdamConfig c = {}) : config(c) {}
};

/// One bias-corrected Adam update of a flat parameter vector. Moments are
/// sized lazily on the first call.
inline void adam_step(OptimizerState& state, Vector& params, const Vector& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient/parameter size mismatch");
  if (state.step == 0 && state.first_moment.size() == 0) {
    state.first_moment = Vector::Zero(params.size());
    state.second_moment = Vector::Zero(params.size());
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  }
  const auto& c = state.config;
  ++state.step;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
  state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.array() -= c.learning_rate * (state.first_moment.array() / correction1) /
                    ((state.second_moment.array() / correction2).sqrt() + c.epsilon);
}

inline void adam_step(OptimizerState& state, Network& net, const Gradients& grads) {
  Vector params = flatten(net);
  adam_step(state, params, flatten(grads));
  assign(net, params);
}

}  // namespace evprob::nn
