#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace odergru {

/// Operand shapes disagree (matrix dimension, list length, parameter layout).
class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf reached an operation that refuses to propagate it.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Cholesky factorization hit a non-positive pivot.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, std::size_t pivot)
      : std::runtime_error(what), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Iterative solver stopped at max_iter without reaching its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Malformed or inconsistent input data (CSV rows, timestamps, splits).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration or checkpoint manifest.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace odergru
