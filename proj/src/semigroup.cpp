#include "stablesde/semigroup.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stablesde/errors.hpp"
#include "stablesde/interp.hpp"
#include "stablesde/quadrature.hpp"
#include "stablesde/special.hpp"

namespace stablesde {

GriddedFunction GriddedFunction::sample(
    const std::vector<double>& grid, const std::function<double(double)>& f) {
  GriddedFunction g;
  g.x_grid = grid;
  g.values.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) g.values[i] = f(grid[i]);
  return g;
}

double GriddedFunction::eval(double x) const {
  return lerp_grid(x_grid, values, x);
}

double GriddedFunction::sup_norm() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double GriddedFunction::p_norm(double p) const {
  std::vector<double> a(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    a[i] = std::pow(std::abs(values[i]), p);
  }
  return std::pow(trapezoid(x_grid, a), 1.0 / p);
}

double GriddedFunction::holder_seminorm(double theta) const {
  double m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) {
      const double d = std::abs(values[j] - values[i]) /
                       std::pow(x_grid[j] - x_grid[i], theta);
      m = std::max(m, d);
    }
  }
  return m;
}

GriddedFunction GriddedFunction::gradient() const {
  GriddedFunction g;
  g.x_grid = x_grid;
  g.values.assign(values.size(), 0.0);
  const std::size_t n = values.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    g.values[i] = (values[i + 1] - values[i - 1]) /
                  (x_grid[i + 1] - x_grid[i - 1]);
  }
  if (n >= 2) {
    g.values[0] = (values[1] - values[0]) / (x_grid[1] - x_grid[0]);
    g.values[n - 1] =
        (values[n - 1] - values[n - 2]) / (x_grid[n - 1] - x_grid[n - 2]);
  }
  return g;
}

GriddedFunction apply_semigroup(const KernelTable& table,
                                const GriddedFunction& f, double t) {
  std::size_t it = table.nt();
  for (std::size_t k = 0; k < table.nt(); ++k) {
    if (std::abs(table.t_grid[k] - t) <= 1e-9 * std::max(1.0, t)) {
      it = k;
      break;
    }
  }
  if (it == table.nt()) {
    throw std::invalid_argument("time is not on the kernel table grid");
  }
  const std::size_t nx = table.nx(), ny = table.ny();
  GriddedFunction out;
  out.x_grid = table.x_grid;
  out.values.assign(nx, 0.0);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    double acc = 0.0;
    for (std::size_t iy = 0; iy + 1 < ny; ++iy) {
      const double h = table.y_grid[iy + 1] - table.y_grid[iy];
      acc += 0.5 * h *
             (table.value(it, ix, iy) * f.eval(table.y_grid[iy]) +
              table.value(it, ix, iy + 1) * f.eval(table.y_grid[iy + 1]));
    }
    // mass beyond the grid carries the edge values of f
    const double total = table.row_integral(it, ix);
    double inner = 0.0;
    {
      std::vector<double> row(ny);
      for (std::size_t iy = 0; iy < ny; ++iy) row[iy] = table.value(it, ix, iy);
      inner = trapezoid(table.y_grid, row);
    }
    const double tail = std::max(total - inner, 0.0);
    acc += 0.5 * tail * (f.values.front() + f.values.back());
    out.values[ix] = acc;
  }
  return out;
}

GriddedFunction frac_deriv_gridded(const GriddedFunction& f, double order) {
  if (!(order > 0.0 && order < 2.0)) {
    throw std::invalid_argument("fractional order must lie in (0,2)");
  }
  const double c = frac_diff_constant(order);
  CubicSpline sp(f.x_grid, f.values);
  const double span = f.x_grid.back() - f.x_grid.front();
  const double w0 = (f.x_grid[1] - f.x_grid[0]);
  auto clamped = [&](double x) -> double {
    if (x <= f.x_grid.front()) return f.values.front();
    if (x >= f.x_grid.back()) return f.values.back();
    return sp(x);
  };
  GriddedFunction out;
  out.x_grid = f.x_grid;
  out.values.assign(f.size(), 0.0);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double x = f.x_grid[i];
    const double fx = f.values[i];
    double acc = sp.deriv2(x) * std::pow(w0, 2.0 - order) / (2.0 - order);
    acc += gauss_panels(
        [&](double w) {
          return (clamped(x + w) + clamped(x - w) - 2.0 * fx) *
                 std::pow(w, -1.0 - order);
        },
        geometric_edges(w0, 3.0 * span, 40));
    acc += (f.values.front() + f.values.back() - 2.0 * fx) *
           std::pow(3.0 * span, -order) / order;
    out.values[i] = c * acc;
  }
  return out;
}

SlopeFit smoothing_exponent(const KernelTable& table, const GriddedFunction& f,
                            const std::vector<double>& t_samples,
                            const std::string& which,
                            const SmoothingParams& params) {
  if (t_samples.size() < 4) {
    throw std::invalid_argument("need at least 4 time samples for a slope");
  }
  SlopeFit fit;
  // A constant probe has identically vanishing derivative norms; report the
  // exact-zero branch instead of regressing on quadrature noise.
  {
    double lo = f.values.front(), hi = f.values.front();
    for (double v : f.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo <= 1e-13 * std::max(1.0, std::abs(hi))) {
      fit.exact_zero = true;
      return fit;
    }
  }
  for (double t : t_samples) {
    const GriddedFunction tf = apply_semigroup(table, f, t);
    double norm;
    if (which == "grad_sup") {
      norm = tf.gradient().sup_norm();
    } else if (which == "grad_holder") {
      norm = tf.gradient().holder_seminorm(params.theta_prime);
    } else if (which == "bessel") {
      const GriddedFunction d =
          frac_deriv_gridded(tf, params.gamma + params.theta);
      norm = tf.p_norm(params.p) + d.p_norm(params.p);
    } else {
      throw std::invalid_argument("unknown smoothing estimate: " + which);
    }
    fit.ts.push_back(t);
    fit.norms.push_back(norm);
  }
  double mx = 0.0;
  for (double v : fit.norms) mx = std::max(mx, v);
  if (mx < 1e-13) {
    fit.exact_zero = true;
    return fit;
  }
  // least squares of log norm against log t
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(fit.ts.size());
  for (int i = 0; i < n; ++i) {
    const double lx = std::log(fit.ts[i]);
    const double ly = std::log(std::max(fit.norms[i], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double rss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = std::log(std::max(fit.norms[i], 1e-300)) -
                     (fit.intercept + fit.slope * std::log(fit.ts[i]));
    rss += r * r;
  }
  if (n > 2) {
    fit.std_err = std::sqrt(rss / (n - 2) / (sxx - sx * sx / n));
  }
  return fit;
}

GriddedFunction maximal_function(const GriddedFunction& f) {
  const std::size_t n = f.size();
  GriddedFunction out;
  out.x_grid = f.x_grid;
  out.values.assign(n, 0.0);
  if (n == 0) return out;
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + std::abs(f.values[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::abs(f.values[i]);
    for (std::size_t k = 1; k < n; ++k) {
      const std::size_t lo = i >= k ? i - k : 0;
      const std::size_t hi = std::min(i + k, n - 1);
      const double sum = prefix[hi + 1] - prefix[lo];
      best = std::max(best, sum / static_cast<double>(2 * k + 1));
      if (lo == 0 && hi == n - 1) break;
    }
    out.values[i] = best;
  }
  return out;
}

}  // namespace stablesde
