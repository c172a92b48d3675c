#include "stablesde/frozen.hpp"

#include <algorithm>
#include <cmath>

#include "stablesde/errors.hpp"
#include "stablesde/quadrature.hpp"
#include "stablesde/special.hpp"

namespace stablesde {

namespace {

inline double one_minus_cos(double u) {
  const double s = std::sin(0.5 * u);
  return 2.0 * s * s;
}

}  // namespace

SymbolTable::SymbolTable(const CoefficientField& field,
                         const std::function<double(double)>& zfactor,
                         double xi_min, double xi_max, int n_nodes) {
  const double alpha = field.alpha();
  lo_ = std::log(xi_min);
  hi_ = std::log(xi_max);
  std::vector<double> lx(n_nodes), ph(n_nodes);

  // One xi at a time: psi(xi) = 2 xi^alpha * integral over u>0 of
  // (1 - cos u) zfactor(u/xi) kappa_tilde(u/xi) u^(-1-alpha) du.
  auto phi_at = [&](double xi) {
    auto integrand = [&](double u) {
      const double z = u / xi;
      return one_minus_cos(u) * zfactor(z) * field.kappa_tilde(z) *
             std::pow(u, -1.0 - alpha);
    };
    double acc = gauss_panels(integrand, geometric_edges(1e-10, 0.5, 40));
    acc += gauss_panels(integrand, uniform_edges(0.5, 300.0, 760));
    acc += gauss_panels(integrand, geometric_edges(300.0, 1e7, 44));
    // Beyond the plateau the oscillation averages out; pure power tail.
    acc += zfactor(1e7 / xi) * field.kappa_tilde(1e7 / xi) *
           std::pow(1e7, -alpha) / alpha;
    return 2.0 * acc;
  };

  for (int i = 0; i < n_nodes; ++i) {
    lx[i] = lo_ + (hi_ - lo_) * i / (n_nodes - 1);
    ph[i] = phi_at(std::exp(lx[i]));
  }
  spline_ = CubicSpline(std::move(lx), std::move(ph));
}

double SymbolTable::phi(double xi) const {
  const double l = std::log(std::max(std::abs(xi), 1e-300));
  if (l <= lo_) return spline_(lo_);
  if (l >= hi_) return spline_(hi_);
  return spline_(l);
}

SymbolBasis::SymbolBasis(const CoefficientField& field, double xi_min,
                         double xi_max) {
  base = SymbolTable(
      field, [&](double z) { return field.sigma_base(z); }, xi_min, xi_max);
  if (!field.sigma_x_independent()) {
    graded = SymbolTable(
        field, [&](double z) { return field.sigma_z(z); }, xi_min, xi_max);
  }
}

FrozenKernel::FrozenKernel(FieldPtr field, double y, SymbolBasisPtr basis)
    : field_(std::move(field)), y_(y), basis_(std::move(basis)) {
  if (!basis_) basis_ = std::make_shared<const SymbolBasis>(*field_);
  sigma_xy_ = field_->sigma_x(y_);
  symbol_mass_a_ = symbol_mass(field_->alpha());
  half_flat_ = 0.5 * field_->bounds().k0 * field_->bounds().kappa0;
}

double FrozenKernel::psi(double xi) const {
  if (xi == 0.0) return 0.0;
  double phi = basis_->base.phi(xi);
  if (!basis_->graded.empty()) phi += sigma_xy_ * basis_->graded.phi(xi);
  return phi * std::pow(std::abs(xi), field_->alpha());
}

double FrozenKernel::psi_hat(double xi) const {
  if (xi == 0.0) return 0.0;
  return psi(xi) -
         half_flat_ * symbol_mass_a_ * std::pow(std::abs(xi), field_->alpha());
}

double FrozenKernel::window(double t) const {
  const double c_lo =
      field_->bounds().k0 * field_->bounds().kappa0 * symbol_mass_a_;
  return std::pow(37.0 / (c_lo * t), 1.0 / field_->alpha());
}

double FrozenKernel::fourier_density(
    double t, double x, const std::function<double(double)>& psi_fn,
    double c_lo) const {
  const double xi_max = std::pow(37.0 / (c_lo * t), 1.0 / field_->alpha());
  const double width = std::min(xi_max / 24.0, M_PI / (4.0 * (1.0 + std::abs(x))));
  const int n = std::max(24, static_cast<int>(std::ceil(xi_max / width)));
  const auto edges = uniform_edges(0.0, xi_max, n);
  const double v = gauss_panels(
      [&](double xi) { return std::cos(x * xi) * std::exp(-t * psi_fn(xi)); },
      edges);
  return v / M_PI;
}

FrozenKernel::Tail FrozenKernel::tail_info(double t, bool hat) const {
  {
    std::lock_guard<std::mutex> lk(cache_mu_);
    auto it = tail_cache_.find({t, hat});
    if (it != tail_cache_.end()) return it->second;
  }
  const double alpha = field_->alpha();
  auto psi_fn = [&](double xi) { return hat ? psi_hat(xi) : psi(xi); };
  const double c_lo = (hat ? half_flat_ : field_->bounds().k0 *
                                              field_->bounds().kappa0) *
                      symbol_mass_a_;
  const double scale_t = std::pow(psi_fn(1.0) * t, 1.0 / alpha);
  double r = 8.0 * scale_t;
  Tail tail;
  for (int k = 0; k < 40; ++k) {
    const double v = fourier_density(t, r, psi_fn, c_lo);
    double kap = field_->kappa(y_, r);
    if (hat) kap -= half_flat_;
    const double theory = t * kap * std::pow(r, -1.0 - alpha);
    tail.radius = r;
    tail.value = v;
    if (theory > 0.0 && std::abs(v / theory - 1.0) < 0.01) break;
    r *= 1.25;
  }
  {
    std::lock_guard<std::mutex> lk(cache_mu_);
    tail_cache_[{t, hat}] = tail;
  }
  return tail;
}

double FrozenKernel::density(double t, double x) const {
  if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
  const double alpha = field_->alpha();
  const double c_lo =
      field_->bounds().k0 * field_->bounds().kappa0 * symbol_mass_a_;
  const double scale_t = std::pow(psi(1.0) * t, 1.0 / alpha);
  const double ax = std::abs(x);
  if (ax > 8.0 * scale_t) {
    const Tail tail = tail_info(t, false);
    if (ax >= tail.radius) {
      return tail.value * std::pow(ax / tail.radius, -1.0 - alpha);
    }
  }
  return fourier_density(t, ax, [&](double xi) { return psi(xi); }, c_lo);
}

double FrozenKernel::density_hat(double t, double x) const {
  if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
  const double alpha = field_->alpha();
  const double c_lo = half_flat_ * symbol_mass_a_;
  const double scale_t = std::pow(std::max(psi_hat(1.0), 1e-12) * t, 1.0 / alpha);
  const double ax = std::abs(x);
  if (ax > 8.0 * scale_t) {
    const Tail tail = tail_info(t, true);
    if (ax >= tail.radius) {
      return tail.value * std::pow(ax / tail.radius, -1.0 - alpha);
    }
  }
  return fourier_density(t, ax, [&](double xi) { return psi_hat(xi); }, c_lo);
}

double FrozenKernel::decompose_residual(double t, double x) const {
  const double alpha = field_->alpha();
  // Reduced kernel must stay a jump kernel.
  for (double z : {0.01, 0.1, 0.5, 1.0, 3.0, 20.0}) {
    if (field_->kappa(y_, z) - half_flat_ < -1e-12) {
      throw std::invalid_argument(
          "reduced jump kernel is negative; flat split invalid");
    }
  }
  {
    std::lock_guard<std::mutex> lk(cache_mu_);
    if (!flat_kernel_) {
      StableSpec spec;
      spec.alpha = alpha;
      spec.scale = symbol_mass_a_;
      flat_kernel_ = std::make_shared<const StableKernel>(spec);
    }
  }
  const auto flat = flat_kernel_;
  const double t_flat = half_flat_ * t;
  const double sc_flat = std::pow(symbol_mass_a_ * t_flat, 1.0 / alpha);
  const double sc_hat =
      std::pow(std::max(psi_hat(1.0), 1e-12) * t, 1.0 / alpha);
  const double reach =
      std::abs(x) + 50.0 * std::max({sc_flat, sc_hat, 0.05});

  std::vector<double> edges;
  auto cluster = [&](double c, double sc) {
    for (double m : {0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
      edges.push_back(c - m * sc);
      edges.push_back(c + m * sc);
    }
  };
  cluster(x, sc_flat);
  cluster(0.0, sc_hat);
  edges.push_back(-reach);
  edges.push_back(reach);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges.erase(std::remove_if(edges.begin(), edges.end(),
                             [&](double e) { return e < -reach || e > reach; }),
              edges.end());

  const double conv = gauss_panels(
      [&](double z) {
        return flat->density(t_flat, x - z) * density_hat(t, z);
      },
      edges);
  return std::abs(density(t, x) - conv);
}

double FrozenKernel::apply(const std::function<double(double)>& phi, double x,
                           const std::function<double(double)>* phi_dd) const {
  const double alpha = field_->alpha();
  const double w0 = 5e-3;
  const double W = 500.0;
  const double phix = phi(x);

  // Small jumps closed with the curvature of phi at x.
  double dd;
  if (phi_dd) {
    dd = (*phi_dd)(x);
  } else {
    dd = (phi(x + w0) + phi(x - w0) - 2.0 * phix) / (w0 * w0);
  }
  const double small = dd * field_->kappa(y_, 0.5 * w0) *
                       std::pow(w0, 2.0 - alpha) / (2.0 - alpha);

  const double body = gauss_panels(
      [&](double w) {
        const double d = phi(x + w) + phi(x - w) - 2.0 * phix;
        return d * field_->kappa(y_, w) * std::pow(w, -1.0 - alpha);
      },
      geometric_edges(w0, W, 72));

  // Beyond W the test function is treated as settled at its far values.
  const double far =
      (phi(x + W) + phi(x - W) - 2.0 * phix) * field_->kappa(y_, 2.0 * W) *
      std::pow(W, -alpha) / alpha;
  return small + body + far;
}

std::vector<double> FrozenKernel::psi_grid() const {
  auto g = geometric_edges(1e-3, 6e3, 96);
  return g;
}

std::vector<double> FrozenKernel::psi_values() const {
  auto g = psi_grid();
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) v[i] = psi(g[i]);
  return v;
}

double char_exponent(const CoefficientField& field, double y, double xi) {
  FrozenKernel k(FieldPtr(&field, [](const CoefficientField*) {}), y);
  return k.psi(xi);
}

double frozen_density(const CoefficientField& field, double y, double t,
                      double x) {
  FrozenKernel k(FieldPtr(&field, [](const CoefficientField*) {}), y);
  return k.density(t, x);
}

double decompose_check(const CoefficientField& field, double y, double t,
                       double x) {
  FrozenKernel k(FieldPtr(&field, [](const CoefficientField*) {}), y);
  return k.decompose_residual(t, x);
}

double apply_frozen(const CoefficientField& field, double y,
                    const std::function<double(double)>& phi, double x) {
  FrozenKernel k(FieldPtr(&field, [](const CoefficientField*) {}), y);
  return k.apply(phi, x);
}

}  // namespace stablesde
