#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "stablesde/errors.hpp"

namespace stablesde {

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
};

// Adaptive Simpson on [a, b]. Throws NumericalError (carrying the residual
// estimate) if the tolerance cannot be met within the depth budget.
QuadratureResult adaptive_simpson(const std::function<double(double)>& f,
                                  double a, double b, double rel_tol,
                                  double abs_tol, int max_depth = 48);

// Fixed-order composite Gauss-Legendre (7-point) over given panel edges.
double gauss_panels(const std::function<double(double)>& f,
                    const std::vector<double>& edges);

// Convenience: n geometric panel edges between a and b (a, b > 0).
std::vector<double> geometric_edges(double a, double b, int n);
// Uniform panel edges.
std::vector<double> uniform_edges(double a, double b, int n);

// Nodes and trapezoid weights for integrating f(s) * s^(p-1) over [0, b]
// against samples of f at geometric nodes; f is extended by a constant on
// the first panel [0, s_1]. Returns weights w_i such that
//   integral ~= sum_i w_i f(s_i).
// Used for time integrals with an integrable endpoint singularity.
std::vector<double> power_weighted_weights(const std::vector<double>& nodes,
                                           double p);

// integral_0^b f(s) s^(p-1) ds with f sampled at `nodes` (ascending, all in
// (0, b], last node == b). Piecewise-linear f between nodes, constant on
// [0, nodes[0]].
double power_weighted_integral(const std::vector<double>& nodes,
                               const std::vector<double>& values, double p);

// Simpson rule on a uniform grid (values.size() odd preferred; falls back to
// trapezoid on the last interval when even).
double simpson_uniform(const std::vector<double>& values, double h);

// Trapezoid on an arbitrary grid.
double trapezoid(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace stablesde
