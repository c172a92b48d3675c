#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "stablesde/interp.hpp"
#include "stablesde/scenario.hpp"
#include "stablesde/stable.hpp"

namespace stablesde {

// phi(xi) = psi(xi) / |xi|^alpha for the jump kernel
// zfactor(z) * kappa_tilde(z) |z|^(-1-alpha); tabulated on a log grid and
// interpolated. phi is smooth, positive and bounded, which makes the
// interpolation uniformly accurate while psi itself spans many scales.
class SymbolTable {
public:
  SymbolTable() = default;
  SymbolTable(const CoefficientField& field,
              const std::function<double(double)>& zfactor, double xi_min,
              double xi_max, int n_nodes = 160);
  double phi(double xi) const;
  bool empty() const { return spline_.empty(); }

private:
  CubicSpline spline_;  // phi against log(xi)
  double lo_ = 0.0, hi_ = 0.0;
};

// Shared per-field symbol decomposition: psi_y = (phi_base + sigma_x(y) *
// phi_graded) |xi|^alpha. Build once, reuse for every freeze point.
struct SymbolBasis {
  explicit SymbolBasis(const CoefficientField& field, double xi_min = 1e-3,
                       double xi_max = 6e3);
  SymbolTable base;
  SymbolTable graded;
};

using SymbolBasisPtr = std::shared_ptr<const SymbolBasis>;

// Kernel of the operator with coefficient frozen at location y: evaluates the
// characteristic exponent, the density p_y(t, x), the reduced density with
// the flat part of the symbol removed, and the operator itself on test
// functions. Immutable after construction except for an idempotent per-time
// tail cache.
class FrozenKernel {
public:
  FrozenKernel(FieldPtr field, double y, SymbolBasisPtr basis = nullptr);

  double y() const { return y_; }
  const CoefficientField& field() const { return *field_; }
  const SymbolBasisPtr& basis() const { return basis_; }

  // Characteristic exponent psi_y(xi) >= 0, even, psi_y(0) = 0.
  double psi(double xi) const;
  // Symbol with the flat component (k0 kappa0 / 2) removed.
  double psi_hat(double xi) const;

  double density(double t, double x) const;
  double density_hat(double t, double x) const;

  // | p_y(t,x) - (p_flat(t) * p_hat(t))(x) | where p_flat is the stable
  // kernel carrying the removed flat symbol part. Throws
  // std::invalid_argument if the reduced jump kernel goes negative.
  double decompose_residual(double t, double x) const;

  // L^y phi(x) = integral over w>0 of
  //     [phi(x+w) + phi(x-w) - 2 phi(x)] kappa(y, w) |w|^(-1-alpha) dw.
  // phi_dd optionally supplies an analytic second derivative for the
  // small-jump closure; otherwise a finite difference is used.
  double apply(const std::function<double(double)>& phi, double x,
               const std::function<double(double)>* phi_dd = nullptr) const;

  // Frequency window: exp(-t psi) < 1e-16 beyond it.
  double window(double t) const;

  // Sampled characteristic exponent (grid and values), for diagnostics.
  std::vector<double> psi_grid() const;
  std::vector<double> psi_values() const;

private:
  struct Tail {
    double radius = 0.0;
    double value = 0.0;
  };
  double fourier_density(double t, double x,
                         const std::function<double(double)>& psi_fn,
                         double c_lo) const;
  Tail tail_info(double t, bool hat) const;

  FieldPtr field_;
  double y_ = 0.0;
  SymbolBasisPtr basis_;
  double sigma_xy_ = 0.0;
  double half_flat_ = 0.0;     // k0 kappa0 / 2
  double symbol_mass_a_ = 0.0; // A(alpha)
  mutable std::mutex cache_mu_;
  mutable std::map<std::pair<double, bool>, Tail> tail_cache_;
  mutable std::shared_ptr<const StableKernel> flat_kernel_;
};

// Free-function forms matching the operation contracts.
double char_exponent(const CoefficientField& field, double y, double xi);
double frozen_density(const CoefficientField& field, double y, double t,
                      double x);
double decompose_check(const CoefficientField& field, double y, double t,
                       double x);
double apply_frozen(const CoefficientField& field, double y,
                    const std::function<double(double)>& phi, double x);

}  // namespace stablesde
