#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stablesde/parametrix.hpp"

namespace stablesde {

struct GriddedFunction {
  std::vector<double> x_grid;
  std::vector<double> values;

  static GriddedFunction sample(const std::vector<double>& grid,
                                const std::function<double(double)>& f);

  double eval(double x) const;  // linear interpolation, clamped outside
  double sup_norm() const;
  double p_norm(double p) const;  // (integral |f|^p dx)^(1/p) by trapezoid
  double holder_seminorm(double theta) const;
  GriddedFunction gradient() const;  // centered differences
  std::size_t size() const { return values.size(); }
};

// T_t f integrated against the tabulated kernel row; the mass outside the
// grid is assigned the edge values of f. Requires t to be a table time.
GriddedFunction apply_semigroup(const KernelTable& table,
                                const GriddedFunction& f, double t);

// Fractional derivative of a gridded function (order in (0,2)) by the
// second-difference quadrature; values clamp to the edges outside the grid.
GriddedFunction frac_deriv_gridded(const GriddedFunction& f, double order);

struct SlopeFit {
  double slope = 0.0;
  double std_err = 0.0;
  double intercept = 0.0;
  bool exact_zero = false;  // all norms vanished; slope undefined
  std::vector<double> ts, norms;
};

struct SmoothingParams {
  double theta = 0.5;        // Hoelder index of the probe function
  double theta_prime = 0.4;  // target index for the gradient increment
  double gamma = 0.4;        // extra smoothing order for the potential norm
  double p = 2.0;            // integrability exponent
};

// Regresses the log-norm of the indicated derivative of T_t f on log t.
// which: grad_sup | grad_holder | bessel.
SlopeFit smoothing_exponent(const KernelTable& table, const GriddedFunction& f,
                            const std::vector<double>& t_samples,
                            const std::string& which,
                            const SmoothingParams& params = {});

// Discrete Hardy-Littlewood maximal function over centered windows; the
// function is extended by zero outside the grid.
GriddedFunction maximal_function(const GriddedFunction& f);

}  // namespace stablesde
