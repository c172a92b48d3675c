#include "stablesde/parametrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "stablesde/errors.hpp"
#include "stablesde/parallel.hpp"
#include "stablesde/quadrature.hpp"
#include "stablesde/special.hpp"

namespace stablesde {

std::string stage_name(KernelStage s) {
  switch (s) {
    case KernelStage::frozen_p0: return "frozen_p0";
    case KernelStage::q0: return "q0";
    case KernelStage::q_iterate: return "q_iterate";
    case KernelStage::full: return "full";
  }
  return "?";
}

double& KernelTable::at(std::size_t it, std::size_t ix, std::size_t iy) {
  return values[(it * nx() + ix) * ny() + iy];
}

double KernelTable::value(std::size_t it, std::size_t ix,
                          std::size_t iy) const {
  return values[(it * nx() + ix) * ny() + iy];
}

namespace {

// Least-squares fit of log|v| = log c - e log|w| over given points.
void fit_power(const std::vector<double>& w, const std::vector<double>& v,
               double* coeff, double* expo) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (v[i] <= 0.0 || w[i] <= 0.0) continue;
    const double lx = std::log(w[i]), ly = std::log(v[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) {
    *coeff = 0.0;
    *expo = 0.0;
    return;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double inter = (sy - slope * sx) / n;
  *expo = -slope;
  *coeff = std::exp(inter);
}

}  // namespace

namespace {

// Two-term far-field fit v(w) ~ c1 w^(-1-a) + c2 w^(-1-2a) over edge
// samples; returns the integral of the fit beyond w_edge. Falls back to a
// one-term form anchored at the outermost positive sample.
double fitted_tail_mass(const std::vector<double>& w,
                        const std::vector<double>& v, double alpha,
                        double w_edge) {
  double s11 = 0, s12 = 0, s22 = 0, r1 = 0, r2 = 0;
  int n = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (v[i] <= 0.0) continue;
    const double b1 = std::pow(w[i], -1.0 - alpha);
    const double b2 = std::pow(w[i], -1.0 - 2.0 * alpha);
    s11 += b1 * b1;
    s12 += b1 * b2;
    s22 += b2 * b2;
    r1 += b1 * v[i];
    r2 += b2 * v[i];
    ++n;
  }
  if (n < 3) return 0.0;
  const double det = s11 * s22 - s12 * s12;
  double c1 = 0.0, c2 = 0.0;
  if (std::abs(det) > 1e-300) {
    c1 = (s22 * r1 - s12 * r2) / det;
    c2 = (s11 * r2 - s12 * r1) / det;
  }
  double mass = c1 * std::pow(w_edge, -alpha) / alpha +
                c2 * std::pow(w_edge, -2.0 * alpha) / (2.0 * alpha);
  if (!(c1 > 0.0) || !(mass > 0.0) || !std::isfinite(mass)) {
    // anchored one-term fallback
    double w_far = 0.0, v_far = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (v[i] > 0.0 && w[i] > w_far) {
        w_far = w[i];
        v_far = v[i];
      }
    }
    if (w_far <= 0.0) return 0.0;
    mass = v_far * std::pow(w_edge / w_far, -1.0 - alpha) * w_edge / alpha;
  }
  return mass;
}

}  // namespace

double KernelTable::row_integral(std::size_t it, std::size_t ix) const {
  std::vector<double> row(ny());
  for (std::size_t iy = 0; iy < ny(); ++iy) row[iy] = value(it, ix, iy);
  double acc = trapezoid(y_grid, row);
  if (!outside_mass.empty()) {
    return acc + outside_mass[it * nx() + ix];
  }
  const double x = x_grid[ix];
  auto tail_mass = [&](bool right) -> double {
    std::vector<double> ws, vs;
    const std::size_t m = ny();
    const double w_edge =
        std::abs((right ? y_grid.back() : y_grid.front()) - x);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t iy = right ? m - 1 - k : k;
      const double w = std::abs(y_grid[iy] - x);
      if (w < 0.55 * w_edge || w < 1.0) break;
      ws.push_back(w);
      vs.push_back(value(it, ix, iy));
    }
    return fitted_tail_mass(ws, vs, alpha, w_edge);
  };
  acc += tail_mass(false) + tail_mass(true);
  return acc;
}

std::vector<double> KernelTable::cdf_row(std::size_t it, std::size_t ix) const {
  std::vector<double> cdf(ny(), 0.0);
  // Left tail mass so the CDF does not start exactly at zero.
  double left = 0.0;
  {
    std::vector<double> ws, vs;
    const double w_edge = std::abs(y_grid.front() - x_grid[ix]);
    for (std::size_t k = 0; k < ny(); ++k) {
      const double w = std::abs(y_grid[k] - x_grid[ix]);
      if (w < 0.55 * w_edge || w < 1.0) break;
      ws.push_back(w);
      vs.push_back(value(it, ix, k));
    }
    left = fitted_tail_mass(ws, vs, alpha, w_edge);
  }
  cdf[0] = left;
  for (std::size_t iy = 1; iy < ny(); ++iy) {
    cdf[iy] = cdf[iy - 1] + 0.5 * (y_grid[iy] - y_grid[iy - 1]) *
                                (std::max(value(it, ix, iy - 1), 0.0) +
                                 std::max(value(it, ix, iy), 0.0));
  }
  return cdf;
}

void KernelTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericalError("cannot open table file for writing: " + path);
  const char magic[8] = {'S', 'D', 'E', 'K', 'T', 'B', 'L', '1'};
  out.write(magic, 8);
  const std::uint32_t st = static_cast<std::uint32_t>(stage);
  const std::uint64_t n1 = t_grid.size(), n2 = x_grid.size(),
                      n3 = y_grid.size();
  out.write(reinterpret_cast<const char*>(&st), 4);
  out.write(reinterpret_cast<const char*>(&n1), 8);
  out.write(reinterpret_cast<const char*>(&n2), 8);
  out.write(reinterpret_cast<const char*>(&n3), 8);
  out.write(reinterpret_cast<const char*>(&alpha), 8);
  out.write(reinterpret_cast<const char*>(&tail_exponent), 8);
  auto dump = [&](const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * 8));
  };
  dump(t_grid);
  dump(x_grid);
  dump(y_grid);
  dump(values);
  const std::uint64_t n_out = outside_mass.size();
  out.write(reinterpret_cast<const char*>(&n_out), 8);
  dump(outside_mass);
  nlohmann::json meta;
  meta["stage"] = stage_name(stage);
  meta["n_iterate"] = n_iterate;
  meta["alpha"] = alpha;
  meta["beta"] = beta;
  meta["scenario_hash"] = scenario_hash;
  meta["tail_exponent"] = tail_exponent;
  meta["residual"] = residual;
  meta["nt"] = n1;
  meta["nx"] = n2;
  meta["ny"] = n3;
  std::ofstream side(path + ".json");
  side << meta.dump(2) << "\n";
}

KernelTable KernelTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericalError("cannot open table file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "SDEKTBL1", 8) != 0) {
    throw NumericalError("bad kernel table magic in " + path);
  }
  KernelTable t;
  std::uint32_t st;
  std::uint64_t n1, n2, n3;
  in.read(reinterpret_cast<char*>(&st), 4);
  in.read(reinterpret_cast<char*>(&n1), 8);
  in.read(reinterpret_cast<char*>(&n2), 8);
  in.read(reinterpret_cast<char*>(&n3), 8);
  in.read(reinterpret_cast<char*>(&t.alpha), 8);
  in.read(reinterpret_cast<char*>(&t.tail_exponent), 8);
  t.stage = static_cast<KernelStage>(st);
  t.t_grid.resize(n1);
  t.x_grid.resize(n2);
  t.y_grid.resize(n3);
  t.values.resize(n1 * n2 * n3);
  auto slurp = [&](std::vector<double>& v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * 8));
  };
  slurp(t.t_grid);
  slurp(t.x_grid);
  slurp(t.y_grid);
  slurp(t.values);
  std::uint64_t n_out = 0;
  in.read(reinterpret_cast<char*>(&n_out), 8);
  if (in) {
    t.outside_mass.resize(n_out);
    slurp(t.outside_mass);
  }
  std::ifstream side(path + ".json");
  if (side) {
    nlohmann::json meta;
    side >> meta;
    t.n_iterate = meta.value("n_iterate", 0);
    t.beta = meta.value("beta", 0.0);
    t.scenario_hash = meta.value("scenario_hash", std::uint64_t{0});
    t.residual = meta.value("residual", 0.0);
  }
  return t;
}

ParametrixGrids ParametrixGrids::standard(double t_min, double t_max, int nt,
                                          double L, int nx) {
  ParametrixGrids g;
  g.t_grid.resize(nt);
  for (int i = 0; i < nt; ++i) {
    g.t_grid[i] =
        t_min * std::pow(t_max / t_min, nt > 1 ? double(i) / (nt - 1) : 0.0);
  }
  g.L = L;
  g.nx = nx;
  return g;
}

void ParametrixGrids::validate(double alpha) const {
  if (t_grid.empty()) throw std::invalid_argument("empty output time grid");
  for (std::size_t i = 0; i + 1 < t_grid.size(); ++i) {
    if (!(t_grid[i] < t_grid[i + 1])) {
      throw std::invalid_argument("output times must be increasing");
    }
  }
  if (!(t_grid.front() > 0.0)) {
    throw std::invalid_argument("output times must be positive");
  }
  const double dx = 2.0 * L / (nx - 1);
  const double required = std::pow(t_grid.front(), 1.0 / alpha) / 4.0;
  if (dx > required * (1.0 + 1e-12)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "grid too coarse for t_min=%g: spacing %.4g exceeds the "
                  "required %.4g",
                  t_grid.front(), dx, required);
    throw std::invalid_argument(buf);
  }
  if (L < 10.0 * std::pow(t_grid.back(), 1.0 / alpha)) {
    throw std::invalid_argument("spatial window too narrow for t_max");
  }
}

namespace {

// Per-node quadrature weights for integral_0^t G(s) ds where G behaves like
// s^(p_left - 1) at s -> 0 and (t-s)^(p_right - 1) at s -> t. Product
// integration against the singular factor near both ends, trapezoid in the
// middle.
std::vector<double> singular_time_weights(const std::vector<double>& nodes,
                                          double t, double p_left,
                                          double p_right) {
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 0.0);
  if (n == 0) return w;
  const double cut = t / 4.0;

  auto add_product_segment = [&](std::size_t i, std::size_t j, double a,
                                 double b, double p) {
    // integral_a^b u^(p-1) H(u) du with H linear between the segment ends;
    // H(u) = G(u) u^(1-p). Node i owns endpoint a, node j endpoint b.
    const double i0 = (std::pow(b, p) - std::pow(a, p)) / p;
    const double i1 = (std::pow(b, p + 1) - std::pow(a, p + 1)) / (p + 1);
    const double inv = 1.0 / (b - a);
    const double ha = std::pow(a, 1.0 - p);  // maps G(a) to H(a)
    const double hb = std::pow(b, 1.0 - p);
    w[i] += (b * i0 - i1) * inv * ha;
    w[j] += (i1 - a * i0) * inv * hb;
  };

  // Leading sliver [0, s_0]: H constant.
  w[0] += std::pow(nodes[0], p_left) / p_left * std::pow(nodes[0], 1.0 - p_left);
  // Trailing sliver [s_{n-1}, t].
  w[n - 1] += std::pow(t - nodes[n - 1], p_right) / p_right *
              std::pow(t - nodes[n - 1], 1.0 - p_right);

  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = nodes[i], b = nodes[i + 1];
    if (b <= cut) {
      add_product_segment(i, i + 1, a, b, p_left);
    } else if (a >= t - cut) {
      // mirrored coordinate u = t - s; endpoints swap roles
      add_product_segment(i + 1, i, t - b, t - a, p_right);
    } else {
      w[i] += 0.5 * (b - a);
      w[i + 1] += 0.5 * (b - a);
    }
  }
  return w;
}

}  // namespace

ParametrixBuilder::ParametrixBuilder(FieldPtr field, ParametrixGrids grids)
    : field_(std::move(field)), grids_(std::move(grids)) {
  grids_.validate(field_->alpha());
  x_grid_.resize(grids_.nx);
  for (int i = 0; i < grids_.nx; ++i) {
    x_grid_[i] = -grids_.L + 2.0 * grids_.L * i / (grids_.nx - 1);
  }
  // Dense internal times: geometric ladder merged with the output times.
  const double t_max = grids_.t_grid.back();
  std::vector<double> s = {grids_.s_min};
  for (int i = 1; i < grids_.n_dense; ++i) {
    s.push_back(grids_.s_min *
                std::pow(t_max / grids_.s_min,
                         double(i) / (grids_.n_dense - 1)));
  }
  for (double t : grids_.t_grid) s.push_back(t);
  std::sort(s.begin(), s.end());
  s_dense_.clear();
  for (double v : s) {
    if (s_dense_.empty() || v > s_dense_.back() * (1.0 + 1e-9)) {
      s_dense_.push_back(v);
    }
  }

  basis_ = std::make_shared<const SymbolBasis>(*field_);
  frozen_.reserve(x_grid_.size());
  for (double y : x_grid_) {
    frozen_.push_back(std::make_unique<FrozenKernel>(field_, y, basis_));
  }
  sigx_nodes_.resize(x_grid_.size());
  for (std::size_t i = 0; i < x_grid_.size(); ++i) {
    sigx_nodes_[i] = field_->sigma_x(x_grid_[i]);
  }
  trivial_q_ = field_->sigma_x_independent();
  build_rows();
  if (!trivial_q_) {
    build_q0();
  }
  build_masses();
}

namespace {
struct SharedFourier {
  std::vector<double> xi;        // uniform grid from 0
  double dxi = 0.0;
  std::vector<double> cos_wxi;   // [iw * n_xi + ixi]
};
}  // namespace

// File-local storage tied to the builder instance through member vectors; the
// shared Fourier structures live in members built here.
struct RowBuildScratch {
  std::vector<double> psi;  // per-y symbol samples on the shared grid
};

void ParametrixBuilder::build_rows() {
  const double alpha = field_->alpha();
  const std::size_t ny = x_grid_.size();
  const std::size_t ns = s_dense_.size();

  // Shared |w| grid: 0 then log nodes up to just past the table diameter.
  const double w_lo = 1e-3, w_hi = 2.0 * grids_.L + 1.0;
  const int n_log = 220;
  w_grid_.assign(1, 0.0);
  for (int i = 0; i <= n_log; ++i) {
    w_grid_.push_back(w_lo * std::pow(w_hi / w_lo, double(i) / n_log));
  }

  // Shared frequency grid. Panel density set by the fastest oscillation.
  const double dxi = M_PI / (6.0 * (w_hi + 1.0));
  const double xi_max = frozen_[0]->window(s_dense_.front());
  std::size_t n_xi = static_cast<std::size_t>(std::ceil(xi_max / dxi));
  n_xi = std::min<std::size_t>(n_xi | 1, 60001);  // odd -> even interval count

  std::vector<double> xi(n_xi);
  for (std::size_t i = 0; i < n_xi; ++i) xi[i] = dxi * static_cast<double>(i);

  // cos table, [iw][ixi].
  std::vector<double> cosw(w_grid_.size() * n_xi);
  parallel_for(static_cast<std::int64_t>(w_grid_.size()), [&](std::int64_t j) {
    for (std::size_t i = 0; i < n_xi; ++i) {
      cosw[j * n_xi + i] = std::cos(w_grid_[j] * xi[i]);
    }
  });

  rows_.assign(ns, std::vector<Row>(ny));
  const double c_lo =
      field_->bounds().k0 * field_->bounds().kappa0 * symbol_mass(alpha);

  parallel_for(static_cast<std::int64_t>(ny), [&](std::int64_t iy) {
    FrozenKernel& fk = *frozen_[iy];
    std::vector<double> psi(n_xi);
    for (std::size_t i = 0; i < n_xi; ++i) psi[i] = fk.psi(xi[i]);
    const double psi1 = fk.psi(1.0);

    std::vector<double> ev(n_xi), vals(w_grid_.size());
    for (std::size_t is = 0; is < ns; ++is) {
      const double s = s_dense_[is];
      // cutoff index where exp(-s psi) is negligible (even interval count)
      std::size_t N = static_cast<std::size_t>(
          std::ceil(std::pow(37.0 / (c_lo * s), 1.0 / alpha) / dxi));
      N = std::min(N | 1, n_xi);  // odd count of points
      // composite Simpson weights on [0, xi_{N-1}]
      for (std::size_t i = 0; i < N; ++i) {
        double w = (i == 0 || i == N - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        ev[i] = w * (dxi / 3.0) * std::exp(-s * psi[i]) / M_PI;
      }
      for (std::size_t j = 0; j < w_grid_.size(); ++j) {
        const double* c = &cosw[j * n_xi];
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) acc += c[i] * ev[i];
        vals[j] = acc;
      }
      // Far-field replacement: first node past the scan radius where the
      // local jump-density tail matches within 1%.
      const double r0 = 8.0 * std::pow(psi1 * s, 1.0 / alpha);
      std::size_t j_switch = w_grid_.size();
      for (std::size_t j = 1; j < w_grid_.size(); ++j) {
        if (w_grid_[j] < r0) continue;
        const double theory =
            s * field_->kappa(x_grid_[iy], w_grid_[j]) *
            std::pow(w_grid_[j], -1.0 - alpha);
        if (theory > 0.0 && std::abs(vals[j] / theory - 1.0) < 0.01) {
          j_switch = j;
          break;
        }
      }
      if (j_switch < w_grid_.size()) {
        const double anchor = vals[j_switch];
        for (std::size_t j = j_switch + 1; j < w_grid_.size(); ++j) {
          // matched local tail following the jump density profile
          const double ratio =
              field_->kappa(x_grid_[iy], w_grid_[j]) /
              field_->kappa(x_grid_[iy], w_grid_[j_switch]);
          vals[j] = anchor * ratio *
                    std::pow(w_grid_[j] / w_grid_[j_switch], -1.0 - alpha);
        }
      }
      Row row;
      {
        std::vector<double> ws, vs;
        for (std::size_t j = w_grid_.size() - 24; j < w_grid_.size(); ++j) {
          ws.push_back(w_grid_[j]);
          vs.push_back(std::max(vals[j], 0.0));
        }
        fit_power(ws, vs, &row.tail_coeff, &row.tail_exp);
        if (!(row.tail_exp > 1.05) || !std::isfinite(row.tail_coeff)) {
          row.tail_coeff = std::max(vals.back(), 0.0) *
                           std::pow(w_grid_.back(), 1.0 + alpha);
          row.tail_exp = 1.0 + alpha;
        }
      }
      row.spline = CubicSpline(w_grid_, vals);
      rows_[is][iy] = std::move(row);
    }
  });
}

double ParametrixBuilder::row_value(std::size_t is, std::size_t iy,
                                    double w) const {
  w = std::abs(w);
  const Row& r = rows_[is][iy];
  if (w <= w_grid_.back()) return r.spline(w);
  return r.tail_coeff * std::pow(w, -r.tail_exp);
}

double ParametrixBuilder::p0_value(std::size_t is, double x, double y) const {
  // The freeze dependence enters only through sigma_x, so interpolate the
  // stored rows in that coordinate; a positional blend would smear the
  // coefficient cusps.
  const double L = grids_.L;
  const double yc = std::clamp(y, -L, L);
  const double dx = x_grid_[1] - x_grid_[0];
  const double fi = (yc - x_grid_.front()) / dx;
  std::size_t i0 = std::min(static_cast<std::size_t>(std::max(fi, 0.0)),
                            x_grid_.size() - 2);
  double a = fi - static_cast<double>(i0);
  const double s0 = sigx_nodes_[i0], s1 = sigx_nodes_[i0 + 1];
  if (std::abs(s1 - s0) > 1e-14) {
    a = std::clamp((field_->sigma_x(yc) - s0) / (s1 - s0), 0.0, 1.0);
  }
  const double w = x - y;
  return (1.0 - a) * row_value(is, i0, w) + a * row_value(is, i0 + 1, w);
}

void ParametrixBuilder::build_q0() {
  const double alpha = field_->alpha();
  const std::size_t n = x_grid_.size();
  const std::size_t ns = s_dense_.size();
  const double dx = x_grid_[1] - x_grid_[0];
  const std::size_t M = 2 * (n - 1);  // extended lattice radius in steps

  // Integer jump multiples (log-graded) with trapezoid-in-w weights.
  std::vector<std::size_t> mult;
  for (std::size_t m = 1; m <= M;) {
    mult.push_back(m);
    const std::size_t next = static_cast<std::size_t>(std::ceil(m * 1.12));
    m = std::max(m + 1, next);
  }
  const std::size_t nm = mult.size();
  std::vector<double> wq(nm, 0.0);  // quadrature weight at node w_m = m dx
  {
    std::vector<double> wn(nm);
    for (std::size_t k = 0; k < nm; ++k) wn[k] = mult[k] * dx;
    for (std::size_t k = 0; k + 1 < nm; ++k) {
      const double h = wn[k + 1] - wn[k];
      wq[k] += 0.5 * h;
      wq[k + 1] += 0.5 * h;
    }
  }

  q0_.assign(ns, Eigen::MatrixXd::Zero(n, n));
  std::vector<double> sig_x(n);
  for (std::size_t i = 0; i < n; ++i) sig_x[i] = field_->sigma_x(x_grid_[i]);

  // weight factor sigma_z(w) kappa_tilde(w) w^(-1-alpha) at the multiples
  std::vector<double> mker(nm);
  for (std::size_t k = 0; k < nm; ++k) {
    const double w = mult[k] * dx;
    mker[k] = field_->sigma_z(w) * field_->kappa_tilde(w) *
              std::pow(w, -1.0 - alpha);
  }
  // Curvature closure covers the whole [0, dx] cell below the first lattice
  // node.
  const double small_prefac = field_->sigma_z(0.6 * dx) *
                              field_->kappa_tilde(0.6 * dx) *
                              std::pow(dx, 2.0 - alpha) / (2.0 - alpha);
  const double far_ker = field_->sigma_z(2.0 * w_grid_.back()) *
                         field_->kappa_tilde(2.0 * w_grid_.back()) *
                         std::pow(w_grid_.back(), -alpha) / alpha;

  parallel_for(static_cast<std::int64_t>(ns * n), [&](std::int64_t task) {
    const std::size_t is = static_cast<std::size_t>(task) / n;
    const std::size_t iy = static_cast<std::size_t>(task) % n;
    // resampled even row on the extended lattice
    std::vector<double> A(M + 1);
    for (std::size_t m = 0; m <= M; ++m) {
      A[m] = row_value(is, iy, m * dx);
    }
    const double tail_c = rows_[is][iy].tail_coeff;
    const double tail_e = rows_[is][iy].tail_exp;
    auto lattice = [&](long m) -> double {
      const std::size_t am = static_cast<std::size_t>(m < 0 ? -m : m);
      if (am <= M) return A[am];
      return tail_c * std::pow(am * dx, -tail_e);
    };
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double sdiff = sig_x[ix] - sig_x[iy];
      if (sdiff == 0.0) continue;
      const long v = static_cast<long>(ix) - static_cast<long>(iy);
      // J(v) = int_{w>0} [p(v+w) + p(v-w) - 2 p(v)] m(w) dw
      double acc = 0.0;
      const double pv = lattice(v);
      for (std::size_t k = 0; k < nm; ++k) {
        const long m = static_cast<long>(mult[k]);
        const double d = lattice(v + m) + lattice(v - m) - 2.0 * pv;
        acc += wq[k] * d * mker[k];
      }
      // below the lattice scale: curvature closure
      const double pdd = (lattice(v + 1) + lattice(v - 1) - 2.0 * pv) /
                         (dx * dx);
      acc += pdd * small_prefac;
      // beyond the stored range: the row has decayed, the centered value
      // dominates
      acc += -2.0 * pv * far_ker;
      q0_[is](ix, iy) = sdiff * acc;
    }
  });
}

void ParametrixBuilder::build_masses() {
  const double alpha = field_->alpha();
  const std::size_t n = x_grid_.size();
  const std::size_t ns = s_dense_.size();
  const double L = grids_.L;

  // Shared w-quadrature nodes/weights for the off-lattice J evaluations.
  const int n_panels = 36;
  auto edges = geometric_edges(1e-5, 600.0, n_panels);
  // 5-point Gauss nodes per panel
  static const double gx[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                               0.5384693101056831, 0.9061798459386640};
  static const double gw[5] = {0.2369268850561891, 0.4786286704993665,
                               0.5688888888888889, 0.4786286704993665,
                               0.2369268850561891};
  struct WNode {
    double w, weight, ker;
  };
  std::vector<WNode> wn;
  for (int p = 0; p < n_panels; ++p) {
    const double c = 0.5 * (edges[p] + edges[p + 1]);
    const double hw = 0.5 * (edges[p + 1] - edges[p]);
    for (int g = 0; g < 5; ++g) {
      WNode nd;
      nd.w = c + hw * gx[g];
      nd.weight = gw[g] * hw;
      nd.ker = field_->sigma_z(nd.w) * field_->kappa_tilde(nd.w) *
               std::pow(nd.w, -1.0 - alpha);
      wn.push_back(nd);
    }
  }

  auto J_at = [&](std::size_t is, double v, double z_freeze) -> double {
    // freeze-interpolated rows
    auto pval = [&](double w) { return p0_value(is, z_freeze + w, z_freeze); };
    const double pv = pval(v);
    double acc = 0.0;
    for (const auto& nd : wn) {
      const double d = pval(v + nd.w) + pval(v - nd.w) - 2.0 * pv;
      acc += nd.weight * d * nd.ker;
    }
    return acc;
  };
  // J with the freeze point exactly on a lattice row (cheaper, used by n0).
  auto J_row = [&](std::size_t is, std::size_t iy, double v) -> double {
    const double pv = row_value(is, iy, v);
    double acc = 0.0;
    for (const auto& nd : wn) {
      const double d = row_value(is, iy, v + nd.w) +
                       row_value(is, iy, v - nd.w) - 2.0 * pv;
      acc += nd.weight * d * nd.ker;
    }
    return acc;
  };

  m0_.assign(ns, Eigen::VectorXd::Zero(n));
  n0_.assign(ns, Eigen::VectorXd::Zero(n));
  p0mass_.assign(ns, Eigen::VectorXd::Zero(n));

  parallel_for(static_cast<std::int64_t>(ns), [&](std::int64_t is_) {
    const std::size_t is = static_cast<std::size_t>(is_);
    const double s = s_dense_[is];
    // node range covers both the kernel spike scale and the coefficient
    // cusp scale near v = 0
    const double v_lo = std::min(
        1e-3, std::pow(s * frozen_[n / 2]->psi(1.0), 1.0 / alpha) / 16.0);
    std::vector<double> vnodes;
    const int nv = 56;
    for (int k = 0; k <= nv; ++k) {
      vnodes.push_back(v_lo *
                       std::pow(2.2 * L / v_lo, double(k) / nv));
    }
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double x = x_grid_[ix];
      const double sx = field_->sigma_x(x);
      double m0 = 0.0, n0 = 0.0, pm = 0.0;
      for (std::size_t k = 0; k + 1 < vnodes.size(); ++k) {
        const double a = vnodes[k], b = vnodes[k + 1];
        const double h = 0.5 * (b - a);
        for (int side = -1; side <= 1; side += 2) {
          // midpoint rule per log panel and side
          const double v = side * 0.5 * (a + b);
          if (!trivial_q_) {
            // row mass: integrate q0(s, x, z) over z = x - v
            m0 += 2.0 * h *
                  (sx - field_->sigma_x(x - v)) * J_at(is, v, x - v);
            // column mass: integrate q0(s, x', x) over x' = x + v
            n0 += 2.0 * h *
                  (field_->sigma_x(x + v) - sx) * J_row(is, ix, v);
          }
          // p0 row mass: integrate p0(s, x, z) = p_{z}(s, x - z), z = x - v
          pm += 2.0 * h * p0_value(is, x, x - v);
        }
      }
      // leading sliver [0, v_lo]: q0 integrands vanish with v; p0 behaves
      // like its peak value
      pm += 2.0 * v_lo * p0_value(is, x, x - 0.5 * v_lo);
      // far tail of the p0 mass
      const double V = vnodes.back();
      pm += 2.0 * s * field_->kappa(x, V) * std::pow(V, -alpha) / alpha;
      m0_[is](ix) = m0;
      n0_[is](ix) = n0;
      p0mass_[is](ix) = pm;
    }
  });
}

namespace {

// Linear interpolation brackets in an ascending grid (clamped).
struct Bracket {
  std::size_t i0, i1;
  double a;  // weight of i1
};

Bracket bracket_of(const std::vector<double>& grid, double v) {
  if (v <= grid.front()) return {0, 0, 0.0};
  if (v >= grid.back()) return {grid.size() - 1, grid.size() - 1, 0.0};
  auto it = std::upper_bound(grid.begin(), grid.end(), v);
  const std::size_t i = static_cast<std::size_t>(it - grid.begin()) - 1;
  const double a = (v - grid[i]) / (grid[i + 1] - grid[i]);
  return {i, i + 1, a};
}

}  // namespace

Eigen::MatrixXd ParametrixBuilder::q0_matrix_at(double tau) const {
  const Bracket b = bracket_of(s_dense_, tau);
  if (b.i0 == b.i1) return q0_[b.i0];
  return (1.0 - b.a) * q0_[b.i0] + b.a * q0_[b.i1];
}

Eigen::MatrixXd ParametrixBuilder::q_matrix_at(double s) const {
  const Bracket b = bracket_of(s_dense_, s);
  if (b.i0 == b.i1) return q_[b.i0];
  return (1.0 - b.a) * q_[b.i0] + b.a * q_[b.i1];
}

Eigen::VectorXd ParametrixBuilder::m0_at(double tau) const {
  const Bracket b = bracket_of(s_dense_, tau);
  if (b.i0 == b.i1) return m0_[b.i0];
  return (1.0 - b.a) * m0_[b.i0] + b.a * m0_[b.i1];
}

Eigen::VectorXd ParametrixBuilder::n0_at(double tau) const {
  const Bracket b = bracket_of(s_dense_, tau);
  if (b.i0 == b.i1) return n0_[b.i0];
  return (1.0 - b.a) * n0_[b.i0] + b.a * n0_[b.i1];
}

Eigen::VectorXd ParametrixBuilder::p0mass_at(double tau) const {
  const Bracket b = bracket_of(s_dense_, tau);
  if (b.i0 == b.i1) return p0mass_[b.i0];
  return (1.0 - b.a) * p0mass_[b.i0] + b.a * p0mass_[b.i1];
}

Eigen::VectorXd ParametrixBuilder::mrow_at(double s) const {
  const Bracket b = bracket_of(s_dense_, s);
  if (b.i0 == b.i1) return mrow_[b.i0];
  return (1.0 - b.a) * mrow_[b.i0] + b.a * mrow_[b.i1];
}

Eigen::VectorXd ParametrixBuilder::kernel_mass(double t) const {
  // full-line mass of the constructed kernel row:
  //   integral p0(t, x, y) dy + time integral of p0(t-s) applied to the
  //   q row-mass, with the usual spike re-centring.
  Eigen::VectorXd mass = p0mass_at(t);
  if (trivial_q_ || q_.empty()) return mass;
  const std::size_t n = x_grid_.size();
  const double dz = x_grid_[1] - x_grid_[0];
  const double p_sing = field_->beta() / field_->alpha();
  std::vector<double> nodes;
  for (double s : s_dense_) {
    if (s < t * (1.0 - 1e-9)) nodes.push_back(s);
  }
  for (double sd : s_dense_) {
    if (sd < t / 2.0) nodes.push_back(t - sd);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [&](double a, double b) {
                            return std::abs(a - b) < 1e-12 * t;
                          }),
              nodes.end());
  if (nodes.empty()) return mass;
  const auto weights = singular_time_weights(nodes, t, p_sing, 1.0);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double s = nodes[k];
    const double tau = t - s;
    const Eigen::MatrixXd P0 = p0_matrix_at(tau, false);
    const Eigen::VectorXd Mr = mrow_at(s);
    Eigen::VectorXd inner = dz * (P0 * Mr);
    const Eigen::VectorXd Dp = p0mass_at(tau) - dz * P0.rowwise().sum();
    inner += Dp.cwiseProduct(Mr);
    mass += weights[k] * inner;
  }
  return mass;
}

Eigen::MatrixXd ParametrixBuilder::p0_matrix_at(double t, bool exact) const {
  const std::size_t n = x_grid_.size();
  Eigen::MatrixXd P(n, n);
  if (!exact) {
    const Bracket b = bracket_of(s_dense_, t);
    for (std::size_t iz = 0; iz < n; ++iz) {
      for (std::size_t ix = 0; ix < n; ++ix) {
        const double w = x_grid_[ix] - x_grid_[iz];
        const double v0 = row_value(b.i0, iz, w);
        const double v1 = (b.i0 == b.i1) ? v0 : row_value(b.i1, iz, w);
        P(ix, iz) = (1.0 - b.a) * v0 + b.a * v1;
      }
    }
    return P;
  }
  // Exact rows at t by direct quadrature per freeze point.
  const double alpha = field_->alpha();
  const double c_lo =
      field_->bounds().k0 * field_->bounds().kappa0 * symbol_mass(alpha);
  parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t iz) {
    const FrozenKernel& fk = *frozen_[iz];
    const double xi_max = std::pow(37.0 / (c_lo * t), 1.0 / alpha);
    const double dxi = M_PI / (6.0 * (2.0 * grids_.L + 2.0));
    std::size_t N = static_cast<std::size_t>(std::ceil(xi_max / dxi)) | 1;
    std::vector<double> ev(N);
    for (std::size_t i = 0; i < N; ++i) {
      const double xi = dxi * static_cast<double>(i);
      double w = (i == 0 || i == N - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      ev[i] = w * (dxi / 3.0) * std::exp(-t * fk.psi(xi)) / M_PI;
    }
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double w = x_grid_[ix] - x_grid_[iz];
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        acc += std::cos(w * dxi * static_cast<double>(i)) * ev[i];
      }
      P(ix, iz) = acc;
    }
  });
  return P;
}

Eigen::MatrixXd ParametrixBuilder::volterra_rhs(
    double t, const std::vector<Eigen::MatrixXd>& q,
    const std::vector<Eigen::VectorXd>& mq) const {
  const std::size_t n = x_grid_.size();
  const double dz = x_grid_[1] - x_grid_[0];
  const double p_sing = field_->beta() / field_->alpha();

  // Node set: dense times below t plus mirrored approach to t.
  std::vector<double> nodes;
  for (double s : s_dense_) {
    if (s < t * (1.0 - 1e-9)) nodes.push_back(s);
  }
  for (double sd : s_dense_) {
    if (sd < t / 2.0) nodes.push_back(t - sd);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [&](double a, double b) {
                            return std::abs(a - b) < 1e-12 * t;
                          }),
              nodes.end());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  if (nodes.empty()) return acc;
  const auto weights = singular_time_weights(nodes, t, p_sing, p_sing);

  Eigen::MatrixXd G(n, n);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double s = nodes[k];
    const double tau = t - s;
    const Eigen::MatrixXd Q0 = q0_matrix_at(tau);
    const Bracket b = bracket_of(s_dense_, s);
    const Eigen::MatrixXd Qs =
        (b.i0 == b.i1) ? q[b.i0]
                       : Eigen::MatrixXd((1.0 - b.a) * q[b.i0] +
                                         b.a * q[b.i1]);
    G.noalias() = Q0 * Qs;
    G *= dz;
    if (tau <= s) {
      // row-mass correction of the q0 factor
      const Eigen::VectorXd D0 = m0_at(tau) - dz * Q0.rowwise().sum();
      G.noalias() += D0.asDiagonal() * Qs;
    } else {
      // column-mass correction of the q factor
      const Eigen::VectorXd Mq =
          (b.i0 == b.i1) ? mq[b.i0]
                         : Eigen::VectorXd((1.0 - b.a) * mq[b.i0] +
                                           b.a * mq[b.i1]);
      const Eigen::VectorXd Dq = Mq - dz * Qs.colwise().sum().transpose();
      G.noalias() += Q0 * Dq.asDiagonal();
    }
    acc.noalias() += weights[k] * G;
  }
  return acc;
}

KernelTable ParametrixBuilder::q_table(int n_terms) {
  if (n_terms < 1) throw std::invalid_argument("need n_terms >= 1");
  const std::size_t ns = s_dense_.size();
  const std::size_t n = x_grid_.size();
  const double dz = x_grid_[1] - x_grid_[0];

  if (trivial_q_) {
    q_.assign(ns, Eigen::MatrixXd::Zero(n, n));
    mq_.assign(ns, Eigen::VectorXd::Zero(n));
    mrow_.assign(ns, Eigen::VectorXd::Zero(n));
    q_residual_ = 0.0;
    q_iterations_ = n_terms;
    return make_table(KernelStage::q_iterate);
  }

  q_ = q0_;
  mq_.assign(ns, Eigen::VectorXd::Zero(n));
  for (std::size_t is = 0; is < ns; ++is) mq_[is] = n0_[is];
  mrow_.assign(ns, Eigen::VectorXd::Zero(n));
  for (std::size_t is = 0; is < ns; ++is) mrow_[is] = m0_[is];
  q_residual_ = 0.0;
  double prev_res = std::numeric_limits<double>::infinity();

  for (int iter = 2; iter <= n_terms; ++iter) {
    std::vector<Eigen::MatrixXd> q_new(ns);
    parallel_for(static_cast<std::int64_t>(ns), [&](std::int64_t is_) {
      const std::size_t is = static_cast<std::size_t>(is_);
      q_new[is] = q0_[is] + volterra_rhs(s_dense_[is], q_, mq_);
    });
    double res = 0.0;
    for (std::size_t is = 0; is < ns; ++is) {
      res = std::max(res, (q_new[is] - q_[is]).cwiseAbs().maxCoeff());
    }
    q_ = std::move(q_new);
    // refresh the column masses alongside the iterate
    std::vector<Eigen::VectorXd> mq_new(ns);
    parallel_for(static_cast<std::int64_t>(ns), [&](std::int64_t is_) {
      const std::size_t is = static_cast<std::size_t>(is_);
      const double s = s_dense_[is];
      std::vector<double> nodes;
      for (double sd : s_dense_) {
        if (sd < s * (1.0 - 1e-9)) nodes.push_back(sd);
      }
      Eigen::VectorXd acc = n0_[is];
      if (!nodes.empty()) {
        const auto w = singular_time_weights(
            nodes, s, field_->beta() / field_->alpha(),
            field_->beta() / field_->alpha());
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const double sp = nodes[k];
          const double tau = s - sp;
          const Eigen::VectorXd N0 = n0_at(tau);
          const Bracket b = bracket_of(s_dense_, sp);
          Eigen::MatrixXd Qs = (b.i0 == b.i1)
                                   ? q_[b.i0]
                                   : Eigen::MatrixXd((1.0 - b.a) * q_[b.i0] +
                                                     b.a * q_[b.i1]);
          Eigen::VectorXd Mq = (b.i0 == b.i1)
                                   ? mq_[b.i0]
                                   : Eigen::VectorXd((1.0 - b.a) * mq_[b.i0] +
                                                     b.a * mq_[b.i1]);
          // integral N0(tau, z) q(sp, z, y) dz with the q column spike
          // re-centred through its mass
          Eigen::VectorXd inner = dz * (Qs.transpose() * N0);
          const Eigen::VectorXd colsum =
              dz * Qs.colwise().sum().transpose();
          inner += N0.cwiseProduct(Mq - colsum);
          acc += w[k] * inner;
        }
      }
      mq_new[is] = acc;
    });
    mq_ = std::move(mq_new);

    // row masses follow the same fixed-point structure with the q0 row
    // spike re-centred through its mass
    std::vector<Eigen::VectorXd> mrow_new(ns);
    parallel_for(static_cast<std::int64_t>(ns), [&](std::int64_t is_) {
      const std::size_t is = static_cast<std::size_t>(is_);
      const double s = s_dense_[is];
      std::vector<double> nodes;
      for (double sd : s_dense_) {
        if (sd < s * (1.0 - 1e-9)) nodes.push_back(sd);
      }
      Eigen::VectorXd acc = m0_[is];
      if (!nodes.empty()) {
        const auto w = singular_time_weights(
            nodes, s, field_->beta() / field_->alpha(),
            field_->beta() / field_->alpha());
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const double sp = nodes[k];
          const double tau = s - sp;
          const Eigen::MatrixXd Q0 = q0_matrix_at(tau);
          const Eigen::VectorXd M0t = m0_at(tau);
          const Eigen::VectorXd Mr = mrow_at(sp);
          Eigen::VectorXd inner = dz * (Q0 * Mr);
          const Eigen::VectorXd D0 = M0t - dz * Q0.rowwise().sum();
          inner += D0.cwiseProduct(Mr);
          acc += w[k] * inner;
        }
      }
      mrow_new[is] = acc;
    });
    mrow_ = std::move(mrow_new);

    if (iter > 2 && res > prev_res * (1.0 + 1e-9)) {
      throw NumericalError(
          "Volterra iteration residual increased; grid or term count "
          "misconfigured",
          res);
    }
    prev_res = res;
    q_residual_ = res;
  }
  q_iterations_ = n_terms;
  return make_table(KernelStage::q_iterate);
}

Eigen::MatrixXd ParametrixBuilder::heat_correction(double t) const {
  const std::size_t n = x_grid_.size();
  const double dz = x_grid_[1] - x_grid_[0];
  const double p_sing = field_->beta() / field_->alpha();

  std::vector<double> nodes;
  for (double s : s_dense_) {
    if (s < t * (1.0 - 1e-9)) nodes.push_back(s);
  }
  for (double sd : s_dense_) {
    if (sd < t / 2.0) nodes.push_back(t - sd);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [&](double a, double b) {
                            return std::abs(a - b) < 1e-12 * t;
                          }),
              nodes.end());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  if (nodes.empty()) return acc;
  // q(s) is singular at s -> 0; p0 mass is regular at s -> t.
  const auto weights = singular_time_weights(nodes, t, p_sing, 1.0);

  Eigen::MatrixXd G(n, n);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double s = nodes[k];
    const double tau = t - s;
    const Eigen::MatrixXd P0 = p0_matrix_at(tau, false);
    const Bracket b = bracket_of(s_dense_, s);
    const Eigen::MatrixXd Qs =
        (b.i0 == b.i1) ? q_[b.i0]
                       : Eigen::MatrixXd((1.0 - b.a) * q_[b.i0] +
                                         b.a * q_[b.i1]);
    G.noalias() = P0 * Qs;
    G *= dz;
    if (tau <= s) {
      const Eigen::VectorXd Dp =
          p0mass_at(tau) - dz * P0.rowwise().sum();
      G.noalias() += Dp.asDiagonal() * Qs;
    } else {
      const Eigen::VectorXd Mq =
          (b.i0 == b.i1) ? mq_[b.i0]
                         : Eigen::VectorXd((1.0 - b.a) * mq_[b.i0] +
                                           b.a * mq_[b.i1]);
      const Eigen::VectorXd Dq = Mq - dz * Qs.colwise().sum().transpose();
      G.noalias() += P0 * Dq.asDiagonal();
    }
    acc.noalias() += weights[k] * G;
  }
  return acc;
}

Eigen::MatrixXd ParametrixBuilder::heat_at(double t) const {
  Eigen::MatrixXd P = p0_matrix_at(t, true);
  if (!trivial_q_ && !q_.empty()) P += heat_correction(t);
  return P;
}

Eigen::VectorXd ParametrixBuilder::correction_outside_mass(double t) const {
  // y-mass of the correction term beyond the construction window:
  //   integral over s of p0(t-s) applied to the out-of-window row mass of q.
  // The out-of-window mass outq(s, z) is smooth in z (the near-diagonal
  // spike cancels between the full-line mass and the window trapezoid).
  const std::size_t n = x_grid_.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  if (trivial_q_ || q_.empty()) return out;
  const double dz = x_grid_[1] - x_grid_[0];
  const double p_sing = field_->beta() / field_->alpha();
  std::vector<double> nodes;
  for (double s : s_dense_) {
    if (s < t * (1.0 - 1e-9)) nodes.push_back(s);
  }
  for (double sd : s_dense_) {
    if (sd < t / 2.0) nodes.push_back(t - sd);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [&](double a, double b) {
                            return std::abs(a - b) < 1e-12 * t;
                          }),
              nodes.end());
  if (nodes.empty()) return out;
  const auto weights = singular_time_weights(nodes, t, p_sing, 1.0);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double s = nodes[k];
    const double tau = t - s;
    const Bracket b = bracket_of(s_dense_, s);
    const Eigen::MatrixXd Qs =
        (b.i0 == b.i1) ? q_[b.i0]
                       : Eigen::MatrixXd((1.0 - b.a) * q_[b.i0] +
                                         b.a * q_[b.i1]);
    const Eigen::VectorXd Mr =
        (b.i0 == b.i1) ? mrow_[b.i0]
                       : Eigen::VectorXd((1.0 - b.a) * mrow_[b.i0] +
                                         b.a * mrow_[b.i1]);
    // window trapezoid of each q row
    Eigen::VectorXd win = dz * Qs.rowwise().sum();
    win -= 0.5 * dz * (Qs.col(0) + Qs.col(n - 1));
    const Eigen::VectorXd outq = Mr - win;
    const Eigen::MatrixXd P0 = p0_matrix_at(tau, false);
    Eigen::VectorXd inner = dz * (P0 * outq);
    const Eigen::VectorXd Dp = p0mass_at(tau) - dz * P0.rowwise().sum();
    inner += Dp.cwiseProduct(outq);
    out += weights[k] * inner;
  }
  return out;
}

KernelTable ParametrixBuilder::make_table(KernelStage stage) const {
  KernelTable tb;
  tb.stage = stage;
  tb.alpha = field_->alpha();
  tb.beta = field_->beta();
  tb.scenario_hash = field_->content_hash();
  tb.t_grid = grids_.t_grid;
  const double win =
      grids_.out_window > 0.0 ? grids_.out_window : 0.5 * grids_.L;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < x_grid_.size(); ++i) {
    if (std::abs(x_grid_[i]) <= win + 1e-12) keep.push_back(i);
  }
  tb.x_grid.clear();
  for (std::size_t i : keep) tb.x_grid.push_back(x_grid_[i]);
  tb.y_grid = x_grid_;
  tb.n_iterate = q_iterations_;
  tb.residual = q_residual_;
  const std::size_t n = x_grid_.size();
  tb.values.assign(tb.t_grid.size() * keep.size() * n, 0.0);

  for (std::size_t it = 0; it < tb.t_grid.size(); ++it) {
    const double t = tb.t_grid[it];
    const Bracket b = bracket_of(s_dense_, t);
    const std::size_t is = b.i0;  // output times are dense nodes by merge
    Eigen::MatrixXd M;
    switch (stage) {
      case KernelStage::frozen_p0:
        M = p0_matrix_at(t, false);
        break;
      case KernelStage::q0:
        M = q0_.empty() ? Eigen::MatrixXd::Zero(n, n) : q0_[is];
        break;
      case KernelStage::q_iterate:
        M = q_.empty() ? Eigen::MatrixXd::Zero(n, n) : q_[is];
        break;
      case KernelStage::full: {
        M = p0_matrix_at(t, false);
        if (!trivial_q_ && !q_.empty()) M += heat_correction(t);
        break;
      }
    }
    for (std::size_t k = 0; k < keep.size(); ++k) {
      for (std::size_t iy = 0; iy < n; ++iy) {
        tb.at(it, k, iy) = M(keep[k], iy);
      }
    }
    if (stage == KernelStage::full || stage == KernelStage::frozen_p0) {
      // outside mass = freeze-kernel mass beyond the window plus the y-tail
      // of the correction term; the window part stays tied to the stored
      // row values.
      Eigen::VectorXd outside = p0mass_at(t);
      {
        const Eigen::MatrixXd P0 = p0_matrix_at(t, false);
        Eigen::VectorXd win = (x_grid_[1] - x_grid_[0]) * P0.rowwise().sum();
        win -= 0.5 * (x_grid_[1] - x_grid_[0]) *
               (P0.col(0) + P0.col(n - 1));
        outside -= win;
      }
      if (stage == KernelStage::full) {
        outside += correction_outside_mass(t);
      }
      if (tb.outside_mass.empty()) {
        tb.outside_mass.assign(tb.t_grid.size() * keep.size(), 0.0);
      }
      for (std::size_t k = 0; k < keep.size(); ++k) {
        tb.outside_mass[it * keep.size() + k] = outside(keep[k]);
      }
    }
  }
  // fitted tail exponent: average of per-row fits at the last time
  {
    const std::size_t it = tb.t_grid.size() - 1;
    double se = 0.0;
    int cnt = 0;
    const std::size_t m = tb.nx();
    for (std::size_t ix = m / 4; ix < 3 * m / 4;
         ix += std::max<std::size_t>(1, m / 12)) {
      std::vector<double> ws, vs;
      for (std::size_t iy = 0; iy < n / 8; ++iy) {
        const double w = std::abs(tb.y_grid[iy] - tb.x_grid[ix]);
        const double v = tb.value(it, ix, iy);
        if (w > 1.0 && v > 0.0) {
          ws.push_back(w);
          vs.push_back(v);
        }
      }
      double c, e;
      fit_power(ws, vs, &c, &e);
      if (std::isfinite(e) && e > 0.0) {
        se += e;
        ++cnt;
      }
    }
    tb.tail_exponent = cnt ? se / cnt : 1.0 + field_->alpha();
  }
  return tb;
}

KernelTable ParametrixBuilder::p0_table() const {
  return make_table(KernelStage::frozen_p0);
}

KernelTable ParametrixBuilder::q0_table() const {
  return make_table(KernelStage::q0);
}

KernelTable ParametrixBuilder::heat_kernel(int n_terms) {
  q_table(n_terms);
  return make_table(KernelStage::full);
}

KernelTable q0_table(FieldPtr field, const ParametrixGrids& grids) {
  ParametrixBuilder b(std::move(field), grids);
  return b.q0_table();
}

KernelTable heat_kernel(FieldPtr field, const ParametrixGrids& grids,
                        int n_terms) {
  ParametrixBuilder b(std::move(field), grids);
  return b.heat_kernel(n_terms);
}

BoundReport verify_kernel_bounds(const KernelTable& table,
                                 const std::string& which, double frac_gamma,
                                 double grid_offset) {
  const double alpha = table.alpha;
  const double beta = table.beta;
  BoundReport rep;
  rep.bound_id = which;
  const std::size_t nx = table.nx(), ny = table.ny();
  const double dx = table.x_grid[1] - table.x_grid[0];
  const std::size_t stride = std::max<std::size_t>(1, nx / 24);
  const std::size_t off =
      static_cast<std::size_t>(grid_offset * static_cast<double>(stride)) %
      stride;

  auto record = [&](double ratio, double t, double w) {
    rep.samples++;
    if (ratio > rep.max_ratio) {
      rep.max_ratio = ratio;
      rep.argmax_t = t;
      rep.argmax_x = w;
    }
  };

  if (which == "grad-p" || which == "q-rho" || which == "frozen-two-sided") {
    for (std::size_t it = 0; it < table.nt(); ++it) {
      const double t = table.t_grid[it];
      for (std::size_t iy = off + stride; iy + stride < ny; iy += stride) {
        for (std::size_t ix = off + 1; ix + 1 < nx; ix += stride) {
          const double w = table.x_grid[ix] - table.y_grid[iy];
          if (which == "grad-p") {
            const double g = (table.value(it, ix + 1, iy) -
                              table.value(it, ix - 1, iy)) /
                             (2.0 * dx);
            const double rhs = RhoKernel{alpha - 1.0, 0.0}.eval(alpha, t, w);
            record(std::abs(g) / rhs, t, w);
          } else if (which == "q-rho") {
            const double rhs = RhoKernel{0.0, beta}.eval(alpha, t, w) +
                               RhoKernel{beta, 0.0}.eval(alpha, t, w);
            record(std::abs(table.value(it, ix, iy)) / rhs, t, w);
          } else {
            const double rhs = RhoKernel{alpha, 0.0}.eval(alpha, t, w);
            const double v = table.value(it, ix, iy);
            if (v > 0.0) record(std::max(v / rhs, rhs / v), t, w);
          }
        }
      }
    }
    return rep;
  }

  if (which == "frac-p") {
    // fractional derivative of order alpha + gamma applied to the tabulated
    // kernel in its first spatial argument
    const double order = alpha + frac_gamma;
    const double c = frac_diff_constant(order);
    for (std::size_t it = 0; it < table.nt(); ++it) {
      const double t = table.t_grid[it];
      std::vector<std::size_t> ys;
      for (std::size_t iy = ny / 3 + off; iy < 2 * ny / 3; iy += 2 * stride) {
        ys.push_back(iy);
      }
      for (std::size_t iy : ys) {
        std::vector<double> row(nx);
        for (std::size_t ix = 0; ix < nx; ++ix) {
          row[ix] = table.value(it, ix, iy);
        }
        CubicSpline sp(table.x_grid, row);
        double tc, te;
        {
          std::vector<double> ws, vs;
          for (std::size_t k = 0; k < nx / 8; ++k) {
            const double w = std::abs(table.x_grid[k] - table.y_grid[iy]);
            if (w > 1.0 && row[k] > 0.0) {
              ws.push_back(w);
              vs.push_back(row[k]);
            }
          }
          fit_power(ws, vs, &tc, &te);
          if (!(te > 1.0) || !std::isfinite(tc)) {
            tc = 0.0;
            te = 1.0 + alpha;
          }
        }
        auto pval = [&](double x) -> double {
          if (x >= table.x_grid.front() && x <= table.x_grid.back()) {
            return sp(x);
          }
          const double w = std::abs(x - table.y_grid[iy]);
          return tc * std::pow(w, -te);
        };
        for (std::size_t ix = nx / 3 + off; ix < 2 * nx / 3;
             ix += 2 * stride) {
          const double x = table.x_grid[ix];
          const double w0 = dx;
          double acc = sp.deriv2(x) * std::pow(w0, 2.0 - order) /
                       (2.0 - order);
          acc += gauss_panels(
              [&](double w) {
                return (pval(x + w) + pval(x - w) - 2.0 * sp(x)) *
                       std::pow(w, -1.0 - order);
              },
              geometric_edges(w0, 4.0 * table.x_grid.back(), 48));
          const double W = 4.0 * table.x_grid.back();
          acc += -2.0 * sp(x) * std::pow(W, -order) / order;
          const double val = c * acc;
          const double rhs = RhoKernel{-frac_gamma, 0.0}.eval(
              alpha, t, x - table.y_grid[iy]);
          record(std::abs(val) / rhs, t, x - table.y_grid[iy]);
        }
      }
    }
    return rep;
  }

  if (which == "grad-p-holder") {
    const double theta = std::min(0.8, alpha + beta - 1.0 - 0.05);
    for (std::size_t it = 0; it < table.nt(); ++it) {
      const double t = table.t_grid[it];
      for (std::size_t iy = off + stride; iy + stride < ny; iy += 2 * stride) {
        for (std::size_t ix = off + 2; ix + 4 < nx; ix += 2 * stride) {
          for (std::size_t step : {std::size_t{1}, std::size_t{3}}) {
            const std::size_t jx = ix + step;
            if (jx + 1 >= nx) continue;
            const double g1 = (table.value(it, ix + 1, iy) -
                               table.value(it, ix - 1, iy)) /
                              (2.0 * dx);
            const double g2 = (table.value(it, jx + 1, iy) -
                               table.value(it, jx - 1, iy)) /
                              (2.0 * dx);
            const double x1 = table.x_grid[ix], x2 = table.x_grid[jx];
            const double y = table.y_grid[iy];
            // the reference point is the one nearer to y; ties pick x1
            const double xt =
                (std::abs(x2 - y) < std::abs(x1 - y)) ? x2 : x1;
            const double rhs =
                std::pow(std::abs(x2 - x1), theta) *
                RhoKernel{alpha - 1.0 - theta, 0.0}.eval(alpha, t, xt - y);
            record(std::abs(g1 - g2) / rhs, t, x1 - y);
          }
        }
      }
    }
    return rep;
  }

  throw std::invalid_argument("unknown kernel bound id: " + which);
}

}  // namespace stablesde
