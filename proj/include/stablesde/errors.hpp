#pragma once

#include <stdexcept>
#include <string>

namespace stablesde {

// Scenario files / CLI arguments that fail validation. CLI exit code 2.
class SchemaError : public std::runtime_error {
public:
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Quadrature failure, divergence, invariant violation at runtime. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  NumericalError(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

private:
  double residual_;
};

// Thrown by the resolvent solver when the damping parameter is too small
// to contract; carries the observed increment ratio.
class LambdaTooSmall : public NumericalError {
public:
  LambdaTooSmall(const std::string& what, double ratio)
      : NumericalError(what, ratio) {}
};

}  // namespace stablesde
