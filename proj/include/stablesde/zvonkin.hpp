#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stablesde/semigroup.hpp"

namespace stablesde {

struct ZvonkinSolution {
  double lambda = 1.0;
  GriddedFunction u;
  GriddedFunction grad_u;
  int iterations = 0;
  double final_increment = 0.0;
  double sup_u = 0.0;
  double sup_grad_u = 0.0;
  bool accepted = false;  // the smallness gate sup_u + sup_grad_u <= 1/2
};

// Damped resolvent integral built on top of a kernel table:
//   R_lambda g = integral_0^inf exp(-lambda t) T_t g dt,
// truncated at 40 / lambda, with exponential-weighted trapezoid between the
// table times, freeze-point short-time rows below the first table time, and
// semigroup powers beyond the last.
class ResolventQuadrature {
public:
  ResolventQuadrature(const CoefficientField& field, const KernelTable& table);
  GriddedFunction apply(double lambda, const GriddedFunction& g) const;
  const std::vector<double>& grid() const { return table_->x_grid; }

private:
  // Freeze-at-target rows p_y(t, w), parameterized by the x-dependent part
  // of the coefficient (the symbol is affine in it).
  struct ShortTimeRow {
    double t;
    std::vector<double> offsets;            // shared w offsets
    std::vector<double> trap;               // trapezoid weights
    std::vector<double> c_nodes;            // sigma_x parameter values
    std::vector<std::vector<double>> pval;  // [ic][iw]
  };
  GriddedFunction apply_short(const ShortTimeRow& row,
                              const GriddedFunction& g) const;
  const CoefficientField* field_;
  const KernelTable* table_;
  std::vector<ShortTimeRow> short_rows_;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iterations = 200;
  int max_lambda_doublings = 20;
};

// Picard iteration u = R_lambda(kbar |grad u| + f). Throws LambdaTooSmall
// when the increments fail to contract.
ZvonkinSolution solve_semilinear(const CoefficientField& field,
                                 const KernelTable& table, double lambda,
                                 double kbar, const GriddedFunction& f,
                                 const SolverOptions& opts = {});

// Picard iteration u = R_lambda(b . grad u + b), escalating lambda by
// doubling until the smallness gate holds. Returns the accepted solution
// with the final lambda.
ZvonkinSolution solve_resolvent(const CoefficientField& field,
                                const KernelTable& table, double lambda_init,
                                const SolverOptions& opts = {});

// Sup-norm of R_lambda(g(u)) - u for the accepted solution (self-consistency
// of the fixed point).
double resolvent_residual(const CoefficientField& field,
                          const KernelTable& table,
                          const ZvonkinSolution& sol);

struct TransformedCoefficients {
  GriddedFunction phi;       // x + u(x) on the grid knots
  double u_left = 0.0, u_right = 0.0;  // clamped values outside the grid

  double phi_fwd(double x) const;
  double phi_inv(double y) const;

  std::function<double(double)> b_tilde;
  std::function<double(double, double)> g_tilde;      // (y, z)
  std::function<double(double, double)> sigma_tilde;  // (y, z)
};

// Builds the diffeomorphism x -> x + u(x), its inverse, and the transformed
// drift / jump coefficients. Throws NumericalError if the grid slope of the
// map drops below 0.4.
TransformedCoefficients build_transform(const ZvonkinSolution& sol,
                                        const CoefficientField& field);

// Lipschitz checks of the transformed coefficients on sampled pairs;
// which is "b-lip" or "g-lip". Returns the fitted constant.
BoundReport verify_coefficient_estimates(const TransformedCoefficients& tc,
                                         const ZvonkinSolution& sol,
                                         const CoefficientField& field,
                                         const std::string& which,
                                         std::uint64_t seed);

// Fitted decay exponent of || u(. + z) - u ||_{1,p} against |z| over
// z in [z_lo, z_hi]; the paper-facing acceptance compares it with the
// solution's smoothing order.
SlopeFit increment_norm_decay(const ZvonkinSolution& sol, double p,
                              double z_lo = 1e-2, double z_hi = 1.0,
                              int n_z = 9);

}  // namespace stablesde
