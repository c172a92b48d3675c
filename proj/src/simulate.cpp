#include "stablesde/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "stablesde/errors.hpp"
#include "stablesde/parallel.hpp"
#include "stablesde/quadrature.hpp"

namespace stablesde {

JumpSampler::JumpSampler(const CoefficientField& field, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  const double alpha = field.alpha();
  // Magnitude CDF on a log grid out to the point where the remaining mass is
  // below 1e-12 of the total.
  const double z_hi =
      std::pow(2.0 * field.bounds().kappa1 / (alpha * 1e-12), 1.0 / alpha);
  const int n = 1024;
  log_z_.resize(n + 1);
  cdf_.assign(n + 1, 0.0);
  const double l0 = std::log(eps), l1 = std::log(z_hi);
  for (int i = 0; i <= n; ++i) log_z_[i] = l0 + (l1 - l0) * i / n;
  for (int i = 1; i <= n; ++i) {
    const double a = std::exp(log_z_[i - 1]), b = std::exp(log_z_[i]);
    const double seg = gauss_panels(
        [&](double z) {
          return field.kappa_tilde(z) * std::pow(z, -1.0 - alpha);
        },
        {a, b});
    cdf_[i] = cdf_[i - 1] + seg;
  }
  const double analytic_tail =
      field.kappa_tilde(z_hi) * std::pow(z_hi, -alpha) / alpha;
  tail_mass_ = 2.0 * (cdf_.back() + analytic_tail);
  for (auto& c : cdf_) c /= (cdf_.back() + analytic_tail);
}

double JumpSampler::sample(double u, double sign_u) const {
  // binary search in the tabulated CDF; clamp into the covered range
  const double uu = std::min(u, cdf_.back() - 1e-16);
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), uu);
  std::size_t i = static_cast<std::size_t>(it - cdf_.begin());
  if (i == 0) i = 1;
  if (i >= cdf_.size()) i = cdf_.size() - 1;
  const double w =
      (uu - cdf_[i - 1]) / std::max(cdf_[i] - cdf_[i - 1], 1e-300);
  const double lz = log_z_[i - 1] + w * (log_z_[i] - log_z_[i - 1]);
  const double mag = std::exp(lz);
  return sign_u < 0.5 ? -mag : mag;
}

DriverStream::DriverStream(FieldPtr field, const JumpSampler* sampler,
                           std::uint64_t seed, std::uint64_t path_index,
                           double eps, double horizon)
    : field_(std::move(field)),
      sampler_(sampler),
      rng_(Rng::substream(seed, path_index)),
      eps_(eps),
      horizon_(horizon) {
  rate_ = field_->bounds().k1 * sampler_->total_rate_factor();
}

bool DriverStream::next(Candidate* c) {
  t_ += rng_.exponential(rate_);
  if (t_ > horizon_) return false;
  c->t = t_;
  c->z = sampler_->sample(rng_.uniform(), rng_.uniform());
  c->r = rng_.uniform() * field_->bounds().k1;
  return true;
}

PathRecord simulate_path(FieldPtr field, const JumpSampler& sampler,
                         std::uint64_t path_index,
                         const SimulateOptions& opts) {
  DriverStream driver(field, &sampler, opts.seed, path_index, opts.eps,
                      opts.horizon);
  PathRecord rec;
  double x = opts.x0;
  double t = 0.0;
  rec.times.push_back(0.0);
  rec.states.push_back(x);

  auto drift_to = [&](double target) {
    while (t < target - 1e-15) {
      const double h = std::min(opts.dt_drift, target - t);
      x += h * field->drift(x);
      t += h;
    }
    t = target;
  };

  DriverStream::Candidate c;
  while (driver.next(&c)) {
    drift_to(c.t);
    if (!std::isfinite(x)) {
      throw NumericalError("state blew up during simulation", t);
    }
    if (std::abs(c.z) > opts.z_floor) {
      const bool accepted = (c.r <= field->sigma(x, c.z));
      if (accepted) x += c.z;
      rec.jump_log.push_back({c.t, c.z, c.r, accepted});
      rec.times.push_back(c.t);
      rec.states.push_back(x);
    }
  }
  drift_to(opts.horizon);
  if (!std::isfinite(x)) {
    throw NumericalError("state blew up during simulation", t);
  }
  rec.times.push_back(opts.horizon);
  rec.states.push_back(x);
  return rec;
}

namespace {

// Endpoint-only variant without the record overhead.
double simulate_endpoint(const FieldPtr& field, const JumpSampler& sampler,
                         std::uint64_t path_index,
                         const SimulateOptions& opts) {
  DriverStream driver(field, &sampler, opts.seed, path_index, opts.eps,
                      opts.horizon);
  double x = opts.x0;
  double t = 0.0;
  auto drift_to = [&](double target) {
    while (t < target - 1e-15) {
      const double h = std::min(opts.dt_drift, target - t);
      x += h * field->drift(x);
      t += h;
    }
    t = target;
  };
  DriverStream::Candidate c;
  while (driver.next(&c)) {
    drift_to(c.t);
    if (std::abs(c.z) > opts.z_floor && c.r <= field->sigma(x, c.z)) {
      x += c.z;
    }
  }
  drift_to(opts.horizon);
  if (!std::isfinite(x)) {
    throw NumericalError("state blew up during simulation", opts.horizon);
  }
  return x;
}

}  // namespace

FarmSummary simulate_endpoints(FieldPtr field, std::int64_t n_paths,
                               const SimulateOptions& opts) {
  JumpSampler sampler(*field, opts.eps);
  FarmSummary out;
  out.n_paths = n_paths;
  out.endpoints.assign(static_cast<std::size_t>(n_paths), 0.0);
  parallel_for(n_paths, [&](std::int64_t i) {
    out.endpoints[static_cast<std::size_t>(i)] = simulate_endpoint(
        field, sampler, static_cast<std::uint64_t>(i), opts);
  });
  // Fixed-order compensated reduction: independent of thread scheduling.
  double sum = 0.0, comp = 0.0;
  for (double v : out.endpoints) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  out.mean = sum / static_cast<double>(n_paths);
  double s2 = 0.0, c2 = 0.0;
  for (double v : out.endpoints) {
    const double d = (v - out.mean) * (v - out.mean);
    const double y = d - c2;
    const double t = s2 + y;
    c2 = (t - s2) - y;
    s2 = t;
  }
  out.var = s2 / std::max<std::int64_t>(n_paths - 1, 1);
  return out;
}

double generator_check(FieldPtr field, double x,
                       const std::function<double(double)>& f,
                       const std::function<double(double)>& f_dd,
                       double h, std::int64_t n_paths,
                       const SimulateOptions& opts_in) {
  if (n_paths < 1000) {
    throw std::invalid_argument(
        "generator check refused: fewer than 1e3 paths is noise-dominated");
  }
  SimulateOptions opts = opts_in;
  opts.horizon = h;
  opts.x0 = x;
  JumpSampler sampler(*field, opts.eps);

  // Monte Carlo mean of f(X_h), fixed-block deterministic reduction.
  std::vector<double> vals(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, [&](std::int64_t i) {
    vals[static_cast<std::size_t>(i)] = f(simulate_endpoint(
        field, sampler, static_cast<std::uint64_t>(i), opts));
  });
  double sum = 0.0, comp = 0.0;
  for (double v : vals) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  const double mc = sum / static_cast<double>(n_paths);

  FrozenKernel frozen(field, x);
  std::function<double(double)> fdd = f_dd;
  const double lf =
      frozen.apply(f, x, f_dd ? &fdd : nullptr) + field->drift(x) * [&] {
        const double d = 1e-5;
        return (f(x + d) - f(x - d)) / (2.0 * d);
      }();
  const double est = (mc - f(x)) / h;
  return std::abs(est - lf) / (std::abs(lf) + 1e-9);
}

std::vector<CauchyRow> strong_cauchy(FieldPtr field, double x0,
                                     const std::vector<double>& dt_list,
                                     std::int64_t n_seeds,
                                     const SimulateOptions& opts_in) {
  for (std::size_t i = 0; i + 1 < dt_list.size(); ++i) {
    if (!(dt_list[i + 1] < dt_list[i])) {
      throw std::invalid_argument("dt_list must be decreasing");
    }
  }
  JumpSampler sampler(*field, opts_in.eps);
  const std::size_t n_levels = dt_list.size();
  std::vector<std::vector<double>> sup_diff(
      n_levels - 1, std::vector<double>(static_cast<std::size_t>(n_seeds)));

  parallel_for(n_seeds, [&](std::int64_t seed_idx) {
    // One driver realization per seed, shared across every refinement.
    std::vector<std::vector<double>> states(n_levels);
    for (std::size_t lev = 0; lev < n_levels; ++lev) {
      SimulateOptions opts = opts_in;
      opts.x0 = x0;
      opts.dt_drift = dt_list[lev];
      PathRecord rec = simulate_path(
          field, sampler, static_cast<std::uint64_t>(seed_idx), opts);
      states[lev] = rec.states;
    }
    for (std::size_t lev = 0; lev + 1 < n_levels; ++lev) {
      double sup = 0.0;
      const std::size_t m =
          std::min(states[lev].size(), states[lev + 1].size());
      for (std::size_t k = 0; k < m; ++k) {
        sup = std::max(sup, std::abs(states[lev][k] - states[lev + 1][k]));
      }
      sup_diff[lev][static_cast<std::size_t>(seed_idx)] = sup;
    }
  });

  std::vector<CauchyRow> rows;
  for (std::size_t lev = 0; lev + 1 < n_levels; ++lev) {
    double sum = 0.0;
    for (double v : sup_diff[lev]) sum += v;
    const double mean = sum / static_cast<double>(n_seeds);
    double s2 = 0.0;
    for (double v : sup_diff[lev]) s2 += (v - mean) * (v - mean);
    const double se =
        std::sqrt(s2 / std::max<std::int64_t>(n_seeds - 1, 1) /
                  static_cast<double>(n_seeds));
    rows.push_back({dt_list[lev], dt_list[lev + 1], mean, se});
  }
  return rows;
}

void diagnostics_A(const CoefficientField& field, PathRecord& path,
                   PathRecord& path_hat, const ZvonkinSolution* u_sol,
                   double eps) {
  if (path.times.size() != path_hat.times.size()) {
    throw std::invalid_argument("paths must share the time grid");
  }
  const std::size_t n = path.times.size();
  path.a1_values.assign(n, 0.0);
  path.a2_values.assign(n, 0.0);

  // a1: trapezoid of 1 + zeta(X) + zeta(X_hat)
  auto a1_integrand = [&](std::size_t k) {
    return 1.0 + field.zeta(path.states[k]) + field.zeta(path_hat.states[k]);
  };
  for (std::size_t k = 1; k < n; ++k) {
    const double h = path.times[k] - path.times[k - 1];
    path.a1_values[k] = path.a1_values[k - 1] +
                        0.5 * h * (a1_integrand(k - 1) + a1_integrand(k));
  }

  if (u_sol == nullptr) {
    path.has_a2 = false;
    return;
  }
  path.has_a2 = true;
  // z-quadrature nodes over eps < |z| <= 1 against the jump measure.
  const double alpha = field.alpha();
  const int nz = 16;
  std::vector<double> zs(nz), zw(nz, 0.0);
  for (int i = 0; i < nz; ++i) {
    zs[i] = eps * std::pow(1.0 / eps, double(i) / (nz - 1));
  }
  for (int i = 0; i + 1 < nz; ++i) {
    const double h = zs[i + 1] - zs[i];
    zw[i] += 0.5 * h;
    zw[i + 1] += 0.5 * h;
  }
  std::vector<GriddedFunction> mgrad(nz);
  for (int i = 0; i < nz; ++i) {
    GriddedFunction jz;
    jz.x_grid = u_sol->u.x_grid;
    jz.values.resize(u_sol->u.size());
    for (std::size_t k = 0; k < jz.values.size(); ++k) {
      jz.values[k] = u_sol->u.eval(jz.x_grid[k] + zs[i]) - u_sol->u.values[k];
    }
    mgrad[i] = maximal_function(jz.gradient());
  }
  auto a2_integrand = [&](std::size_t k) {
    double acc = 0.0;
    for (int i = 0; i < nz; ++i) {
      const double m = mgrad[i].eval(path.states[k]) +
                       mgrad[i].eval(path_hat.states[k]);
      const double nu = field.kappa_tilde(zs[i]) *
                        std::pow(zs[i], -1.0 - alpha);
      acc += 2.0 * zw[i] * m * m * nu;  // both signs of z
    }
    return acc;
  };
  for (std::size_t k = 1; k < n; ++k) {
    const double h = path.times[k] - path.times[k - 1];
    path.a2_values[k] = path.a2_values[k - 1] +
                        0.5 * h * (a2_integrand(k - 1) + a2_integrand(k));
  }
}

double ks_distance(std::vector<double> samples,
                   const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double F = cdf(samples[i]);
    d = std::max(d, std::abs(F - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - F));
  }
  return d;
}

std::function<double(double)> cdf_from_density(
    const std::function<double(double)>& density, double x_lo, double x_hi,
    int n, double tail_exponent) {
  auto grid = std::make_shared<std::vector<double>>();
  auto cum = std::make_shared<std::vector<double>>();
  grid->resize(n);
  cum->assign(n, 0.0);
  std::vector<double> dens(n);
  for (int i = 0; i < n; ++i) {
    (*grid)[i] = x_lo + (x_hi - x_lo) * i / (n - 1);
    dens[i] = std::max(density((*grid)[i]), 0.0);
  }
  // power tails matched at the edges
  const double e = tail_exponent;
  const double left_tail = dens.front() * std::abs(x_lo) / (e - 1.0);
  const double right_tail = dens.back() * std::abs(x_hi) / (e - 1.0);
  (*cum)[0] = left_tail;
  for (int i = 1; i < n; ++i) {
    (*cum)[i] = (*cum)[i - 1] + 0.5 * ((*grid)[i] - (*grid)[i - 1]) *
                                    (dens[i - 1] + dens[i]);
  }
  const double total = cum->back() + right_tail;
  return [grid, cum, total, e, x_lo, x_hi](double x) -> double {
    if (x <= x_lo) {
      return (*cum)[0] * std::pow(x / x_lo, 1.0 - e) / total;
    }
    if (x >= x_hi) {
      const double right = total - (*cum)[cum->size() - 1];
      return 1.0 - right * std::pow(x / x_hi, 1.0 - e) / total;
    }
    return lerp_grid(*grid, *cum, x) / total;
  };
}

}  // namespace stablesde
