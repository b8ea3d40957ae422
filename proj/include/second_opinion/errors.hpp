#pragma once

#include <stdexcept>
#include <string>

namespace second_opinion {

/// Invalid run configuration (unknown key, out-of-range value).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (schema, parse, contract on data).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solver failure: singular Hessian, non-convergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace second_opinion
