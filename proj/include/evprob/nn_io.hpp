#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "evprob/error.hpp"
#include "evprob/nn.hpp"

namespace evprob::nn {

inline constexpr int kParamFormatVersion = 1;

namespace detail {

template <class Derived>
nlohmann::json flat_array(const Eigen::DenseBase<Derived>& m) {
  // Matrix is row-major, so data() order is the documented row-major order.
  const auto& d = m.derived();
  return nlohmann::json(std::vector<double>(d.data(), d.data() + d.size()));
}

inline Matrix read_matrix(const nlohmann::json& j, const char* key, std::size_t rows, std::size_t cols) {
  const auto values = j.at(key).get<std::vector<double>>();
  if (values.size() != rows * cols) {
    throw DataError(std::string("parameter array '") + key + "' has " + std::to_string(values.size()) +
                    " entries, expected " + std::to_string(rows * cols));
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

inline RowVector read_row(const nlohmann::json& j, const char* key, std::size_t n) {
  const Matrix m = read_matrix(j, key, 1, n);
  return m.row(0);
}

}  // namespace detail

/// Versioned JSON: layer list with shapes, kind, activation and flat
/// row-major parameter arrays, plus the prior and the seed that built it.
inline nlohmann::json network_to_json(const Network& net, std::uint64_t seed) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers) {
    nlohmann::json l;
    l["in"] = layer.in_dim();
    l["out"] = layer.out_dim();
    l["activation"] = activation_name(layer.activation);
    if (layer.is_variational()) {
      const auto& v = layer.variational();
      l["kind"] = "variational";
      l["weight_mu"] = detail::flat_array(v.weight_mu);
      l["weight_rho"] = detail::flat_array(v.weight_rho);
      l["bias_mu"] = detail::flat_array(v.bias_mu);
      l["bias_rho"] = detail::flat_array(v.bias_rho);
    } else {
      const auto& d = layer.dense();
      l["kind"] = "deterministic";
      l["weight"] = detail::flat_array(d.weight);
      l["bias"] = detail::flat_array(d.bias);
    }
    layers.push_back(std::move(l));
  }
  return nlohmann::json{{"format", "evprob-network"},
                        {"version", kParamFormatVersion},
                        {"prior", {{"mean", net.prior.mean}, {"std", net.prior.std}}},
                        {"seed", seed},
                        {"layers", std::move(layers)}};
}

inline Network network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "evprob-network") throw DataError("not an evprob network");
    const int version = j.at("version").get<int>();
    if (version != kParamFormatVersion) {
      throw DataError("unsupported network format version " + std::to_string(version));
    }
    Network net;
    net.prior.mean = j.at("prior").at("mean").get<double>();
    net.prior.std = j.at("prior").at("std").get<double>();
    std::size_t prev_out = 0;
    for (const auto& l : j.at("layers")) {
      const auto in = l.at("in").get<std::size_t>();
      const auto out = l.at("out").get<std::size_t>();
      if (prev_out != 0 && in != prev_out) throw DataError("layer input size does not chain with previous layer");
      prev_out = out;
      const auto activation = activation_from_name(l.at("activation").get<std::string>());
      const auto kind = l.at("kind").get<std::string>();
      if (kind == "variational") {
        net.layers.push_back(Layer{VariationalParams{detail::read_matrix(l, "weight_mu", in, out),
                                                     detail::read_matrix(l, "weight_rho", in, out),
                                                     detail::read_row(l, "bias_mu", out),
                                                     detail::read_row(l, "bias_rho", out)},
                                   activation});
      } else if (kind == "deterministic") {
        net.layers.push_back(
            Layer{DenseParams{detail::read_matrix(l, "weight", in, out), detail::read_row(l, "bias", out)},
                  activation});
      } else {
        throw DataError("unknown layer kind '" + kind + "'");
      }
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed network JSON: ") + e.what());
  }
}

}  // namespace evprob::nn
