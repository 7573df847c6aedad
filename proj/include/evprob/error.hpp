#pragma once

#include <stdexcept>
#include <string>

namespace evprob {

/// Malformed or inconsistent input data (CSV rows, model files, traces).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or other numerical breakdown during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace evprob
