#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "stablesde/parametrix.hpp"
#include "stablesde/interp.hpp"
#include "stablesde/quadrature.hpp"

using namespace stablesde;

namespace {

FieldPtr load(const char* name) {
  return load_scenario(std::string(SCENARIO_DIR) + "/" + name);
}

ParametrixGrids test_grids() {
  ParametrixGrids g = ParametrixGrids::standard(0.25, 1.0, 4, 10.0, 203);
  g.t_grid = {0.25, 0.5, 0.75, 1.0};  // closed under the sums used below
  g.n_dense = 26;
  g.s_min = 4e-3;
  return g;
}

struct Fixture {
  FieldPtr field;
  std::unique_ptr<ParametrixBuilder> builder;
  KernelTable q0_tab, q_tab, full;
  Fixture() {
    field = load("holder.json");
    builder = std::make_unique<ParametrixBuilder>(field, test_grids());
    q0_tab = builder->q0_table();
    q_tab = builder->q_table(6);
    full = builder->heat_kernel(6);
  }
};

Fixture& fx() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_SUITE_BEGIN("parametrix");

TEST_CASE("grid preconditions") {
  ParametrixGrids g = ParametrixGrids::standard(0.25, 1.0, 4, 10.0, 64);
  CHECK_THROWS_WITH_AS(g.validate(1.5),
                       doctest::Contains("grid too coarse"),
                       std::invalid_argument);
  ParametrixGrids ok = test_grids();
  CHECK_NOTHROW(ok.validate(1.5));
}

TEST_CASE("constant coefficients collapse the series") {
  auto field = load("constant.json");
  ParametrixGrids g = ParametrixGrids::standard(0.25, 1.0, 3, 10.0, 203);
  g.n_dense = 14;
  ParametrixBuilder b(field, g);
  KernelTable q0 = b.q0_table();
  double q0max = 0.0;
  for (double v : q0.values) q0max = std::max(q0max, std::abs(v));
  CHECK(q0max == 0.0);  // x-independent coefficient short-circuits exactly

  KernelTable full = b.heat_kernel(4);
  KernelTable p0 = b.p0_table();
  double diff = 0.0;
  for (std::size_t i = 0; i < full.values.size(); ++i) {
    diff = std::max(diff, std::abs(full.values[i] - p0.values[i]));
  }
  CHECK(diff < 1e-6);

  // against the scalar evaluator
  FrozenKernel fk(field, 0.0);
  const std::size_t iy = p0.ny() / 2;
  double scal_diff = 0.0;
  for (std::size_t ix = 0; ix < p0.nx(); ix += 9) {
    const double w = p0.x_grid[ix] - p0.y_grid[iy];
    scal_diff = std::max(scal_diff,
                         std::abs(p0.value(1, ix, iy) - fk.density(0.5, w)));
  }
  CHECK(scal_diff < 5e-5);
}

TEST_CASE("q0 vanishes on the diagonal and obeys the profile bound") {
  const auto& f = fx();
  const auto& q0 = f.q0_tab;
  const std::size_t off = lower_index(q0.y_grid, q0.x_grid.front());
  for (std::size_t it = 0; it < q0.nt(); ++it) {
    for (std::size_t i = 0; i < q0.nx(); i += 17) {
      CHECK(q0.value(it, i, off + i) == 0.0);
    }
  }
  auto ra = verify_kernel_bounds(q0, "q-rho", 0.2, 0.0);
  auto rb = verify_kernel_bounds(q0, "q-rho", 0.2, 0.5);
  CHECK(std::isfinite(ra.max_ratio));
  CHECK(ra.max_ratio > 0.0);
  CHECK(ra.max_ratio / rb.max_ratio < 2.0);
  CHECK(rb.max_ratio / ra.max_ratio < 2.0);
}

TEST_CASE("volterra iteration: first iterate is q0, contraction afterwards") {
  auto field = load("holder.json");
  ParametrixGrids g = test_grids();
  g.n_dense = 14;
  ParametrixBuilder b(field, g);
  KernelTable q1 = b.q_table(1);
  KernelTable q0 = b.q0_table();
  double diff = 0.0;
  for (std::size_t i = 0; i < q1.values.size(); ++i) {
    diff = std::max(diff, std::abs(q1.values[i] - q0.values[i]));
  }
  CHECK(diff == 0.0);

  KernelTable q2 = b.q_table(2);
  const double r2 = q2.residual;
  KernelTable q3 = b.q_table(3);
  const double r3 = q3.residual;
  CHECK(r2 > 0.0);
  CHECK(r3 / r2 <= 0.5);
}

TEST_CASE("kernel rows integrate to one") {
  const auto& f = fx();
  const auto& tb = f.full;
  double worst = 0.0;
  for (std::size_t it = 0; it < tb.nt(); ++it) {
    for (std::size_t ix = 0; ix < tb.nx(); ix += 5) {
      worst = std::max(worst, std::abs(tb.row_integral(it, ix) - 1.0));
    }
  }
  INFO("worst row-sum deviation ", worst);
  CHECK(worst < 1e-2);
}

TEST_CASE("kernel stays nonnegative at quadrature tolerance") {
  const auto& f = fx();
  double mn = 0.0;
  for (double v : f.full.values) mn = std::min(mn, v);
  INFO("most negative value ", mn);
  CHECK(mn >= -1e-8);
}

TEST_CASE("series consistency against the reported residual") {
  auto field = load("holder.json");
  ParametrixGrids g = test_grids();
  g.n_dense = 14;
  ParametrixBuilder b(field, g);
  KernelTable f4 = b.heat_kernel(4);
  const double res4 = f4.residual;
  KernelTable f6 = b.heat_kernel(6);
  double diff = 0.0;
  for (std::size_t i = 0; i < f4.values.size(); ++i) {
    diff = std::max(diff, std::abs(f4.values[i] - f6.values[i]));
  }
  INFO("sup difference ", diff, " residual ", res4);
  CHECK(diff < res4);
}

TEST_CASE("chapman-kolmogorov on the table") {
  const auto& f = fx();
  const auto& tb = f.full;
  // (s, t) pairs whose sum is again a table time
  const std::size_t pairs[][3] = {{0, 0, 1}, {1, 1, 3}, {0, 1, 2}};
  const double dz = tb.y_grid[1] - tb.y_grid[0];
  const std::size_t off = lower_index(tb.y_grid, tb.x_grid.front());
  for (const auto& pr : pairs) {
    const std::size_t is = pr[0], it = pr[1], ist = pr[2];
    for (std::size_t ix : {tb.nx() / 2, tb.nx() / 2 + 7}) {
      for (std::size_t iy : {tb.ny() / 2 + 3, tb.ny() / 2 - 11}) {
        double conv = 0.0;
        // the intermediate point runs over the table's first-argument range
        for (std::size_t iz = 0; iz < tb.nx(); ++iz) {
          conv += tb.value(is, ix, off + iz) * tb.value(it, iz, iy) * dz;
        }
        const double target = tb.value(ist, ix, iy);
        CHECK(std::abs(conv - target) < 3e-2 * target);
      }
    }
  }
}

TEST_CASE("time derivative matches the generator") {
  const auto& f = fx();
  auto& b = *f.builder;
  const auto& grid = f.full.y_grid;  // heat_at spans the construction grid
  const std::size_t n = grid.size();
  for (auto [t, ix, iy] :
       {std::tuple{0.5, n / 2 + 4, n / 2}, {0.75, n / 2 - 6, n / 2 + 2},
        {0.5, n / 2 + 14, n / 2 - 3}}) {
    const double h = 0.04 * t;
    Eigen::MatrixXd pa = b.heat_at(t);
    Eigen::MatrixXd pm = b.heat_at(t - h);
    Eigen::MatrixXd pb = b.heat_at(t + h);
    const double dpdt = (pb(ix, iy) - pm(ix, iy)) / (2.0 * h);
    // generator applied in the first argument at freeze point x
    std::vector<double> r(n);
    for (std::size_t k = 0; k < n; ++k) r[k] = pa(k, iy);
    CubicSpline row(grid, r);
    // power-law extension fitted on the left edge decade
    double tc = 0.0, te = 2.5;
    {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      int cnt = 0;
      for (std::size_t k = 0; k < n / 8; ++k) {
        const double w = std::abs(grid[k] - grid[iy]);
        if (w < 1.0 || r[k] <= 0.0) continue;
        const double lx = std::log(w), ly = std::log(r[k]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly; ++cnt;
      }
      const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
      te = -slope;
      tc = std::exp((sy - slope * sx) / cnt);
    }
    FrozenKernel fk(f.field, grid[ix]);
    auto phi = [&](double x) -> double {
      if (x <= grid.front() || x >= grid.back()) {
        return tc * std::pow(std::abs(x - grid[iy]), -te);
      }
      return row(x);
    };
    const double gen = fk.apply(phi, grid[ix]);
    INFO("t=", t, " dpdt=", dpdt, " gen=", gen);
    CHECK(std::abs(dpdt - gen) <= 0.05 * std::max(std::abs(gen), 1e-4));
  }
}

TEST_CASE("gradient and fractional bounds are grid-stable") {
  const auto& f = fx();
  auto ga = verify_kernel_bounds(f.full, "grad-p", 0.2, 0.0);
  auto gb = verify_kernel_bounds(f.full, "grad-p", 0.2, 0.5);
  CHECK(ga.max_ratio > 0.0);
  CHECK(ga.max_ratio / gb.max_ratio < 2.0);
  CHECK(gb.max_ratio / ga.max_ratio < 2.0);

  auto fa = verify_kernel_bounds(f.full, "frac-p", f.full.beta / 2.0, 0.0);
  auto fb = verify_kernel_bounds(f.full, "frac-p", f.full.beta / 2.0, 0.5);
  CHECK(std::isfinite(fa.max_ratio));
  CHECK(fa.max_ratio / fb.max_ratio < 2.0);
  CHECK(fb.max_ratio / fa.max_ratio < 2.0);

  auto ha = verify_kernel_bounds(f.full, "grad-p-holder", 0.2, 0.0);
  CHECK(std::isfinite(ha.max_ratio));
  CHECK(ha.max_ratio > 0.0);
}

TEST_CASE("table io round trip") {
  const auto& f = fx();
  const std::string path = "/tmp/ktab_test.bin";
  f.full.save(path);
  KernelTable back = KernelTable::load(path);
  CHECK(back.stage == KernelStage::full);
  CHECK(back.t_grid == f.full.t_grid);
  CHECK(back.values == f.full.values);
  CHECK(back.alpha == f.full.alpha);
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());
}

TEST_SUITE_END();
