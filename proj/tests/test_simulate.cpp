#include <doctest.h>

#include <cmath>

#include <algorithm>

#include "stablesde/rng.hpp"
#include "stablesde/simulate.hpp"
#include "stablesde/special.hpp"

using namespace stablesde;

namespace {

FieldPtr load(const char* name) {
  return load_scenario(std::string(SCENARIO_DIR) + "/" + name);
}

}  // namespace

TEST_SUITE_BEGIN("simulate");

TEST_CASE("jump sampler reproduces the tail mass and the law") {
  auto field = load("constant.json");
  JumpSampler sampler(*field, 1e-2);
  const double expected = 2.0 * std::pow(1e-2, -1.5) / 1.5;
  CHECK(sampler.total_rate_factor() ==
        doctest::Approx(expected).epsilon(1e-4));
  // inverse-transform law check: P(|z| > w) = (eps/w)^alpha
  Rng rng(3);
  int over = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = sampler.sample(rng.uniform(), rng.uniform());
    if (std::abs(z) > 0.05) ++over;
  }
  const double p_over = std::pow(1e-2 / 0.05, 1.5);
  CHECK(std::abs(double(over) / n - p_over) < 3.0 * std::sqrt(p_over / n));
}

TEST_CASE("driver stream invariants and determinism") {
  auto field = load("variable.json");
  JumpSampler sampler(*field, 5e-3);
  DriverStream d1(field, &sampler, 42, 7, 5e-3, 1.0);
  DriverStream d2(field, &sampler, 42, 7, 5e-3, 1.0);
  DriverStream::Candidate a, b;
  double t_prev = 0.0;
  int count = 0;
  while (d1.next(&a)) {
    REQUIRE(d2.next(&b));
    CHECK(a.t == b.t);
    CHECK(a.z == b.z);
    CHECK(a.r == b.r);
    CHECK(a.t > t_prev);
    CHECK(std::abs(a.z) > 5e-3);
    CHECK(a.r >= 0.0);
    CHECK(a.r <= field->bounds().k1);
    t_prev = a.t;
    if (++count > 2000) break;
  }
  CHECK(count > 100);
}

TEST_CASE("degenerate cases: no candidates and full acceptance") {
  auto field = load("constant.json");
  SimulateOptions opts;
  opts.eps = 0.2;          // tame rate
  opts.horizon = 1e-7;     // essentially no candidates
  opts.x0 = 1.7;
  JumpSampler sampler(*field, opts.eps);
  PathRecord rec = simulate_path(field, sampler, 0, opts);
  CHECK(rec.final_state() == 1.7);

  // sigma == k1: every candidate accepted
  opts.horizon = 0.5;
  PathRecord rec2 = simulate_path(field, sampler, 1, opts);
  CHECK(!rec2.jump_log.empty());
  for (const auto& ev : rec2.jump_log) CHECK(ev.accepted);
}

TEST_CASE("thinning acceptance frequency per jump bin") {
  auto field = load("variable.json");
  const double x_frozen = 0.8;
  const double k1 = field->bounds().k1;
  SimulateOptions opts;
  opts.eps = 1e-2;
  JumpSampler sampler(*field, opts.eps);
  DriverStream drv(field, &sampler, 99, 0, opts.eps, 1e9);
  const int n = 100000;
  // log-magnitude bins, both signs folded (sigma is even in z)
  const int nb = 16;
  std::vector<double> edges(nb + 1);
  for (int i = 0; i <= nb; ++i) {
    edges[i] = 1e-2 * std::pow(1e3, double(i) / nb);
  }
  std::vector<long> tot(nb, 0), acc(nb, 0);
  std::vector<double> psum(nb, 0.0);
  DriverStream::Candidate c;
  for (int i = 0; i < n; ++i) {
    REQUIRE(drv.next(&c));
    const double az = std::abs(c.z);
    int b = int(std::lower_bound(edges.begin(), edges.end(), az) -
                edges.begin()) - 1;
    if (b < 0 || b >= nb) continue;
    tot[b]++;
    psum[b] += field->sigma(x_frozen, c.z) / k1;
    if (c.r <= field->sigma(x_frozen, c.z)) acc[b]++;
  }
  for (int b = 0; b < nb; ++b) {
    if (tot[b] < 200) continue;
    const double phat = double(acc[b]) / tot[b];
    const double pbar = psum[b] / tot[b];
    const double se = std::sqrt(std::max(pbar * (1.0 - pbar), 1e-6) /
                                double(tot[b]));
    INFO("bin ", b, " phat ", phat, " pbar ", pbar, " se ", se);
    CHECK(std::abs(phat - pbar) <= 3.0 * se);
  }
}

TEST_CASE("endpoint farm is deterministic and order-independent") {
  auto field = load("variable.json");
  SimulateOptions opts;
  opts.eps = 2e-2;
  opts.horizon = 0.5;
  opts.seed = 11;
  FarmSummary a = simulate_endpoints(field, 4000, opts);
  FarmSummary b = simulate_endpoints(field, 4000, opts);
  CHECK(a.mean == b.mean);
  CHECK(a.var == b.var);
  CHECK(a.endpoints == b.endpoints);
}

TEST_CASE("empirical law matches the frozen kernel for constant sigma") {
  auto field = load("constant.json");
  SimulateOptions opts;
  opts.eps = 5e-3;
  opts.horizon = 1.0;
  opts.seed = 5;
  FarmSummary farm = simulate_endpoints(field, 30000, opts);
  FrozenKernel fk(field, 0.0);
  auto cdf = cdf_from_density([&](double x) { return fk.density(1.0, x); },
                              -40.0, 40.0, 1600, 2.5);
  const double ks = ks_distance(farm.endpoints, cdf);
  INFO("KS distance ", ks);
  CHECK(ks < 0.02);
}

TEST_CASE("generator check against the cosine eigenfunction") {
  auto field = load("constant.json");
  SimulateOptions opts;
  opts.eps = 1e-3;
  opts.seed = 17;
  const double psi1 = FrozenKernel(field, 0.0).psi(1.0);
  CHECK(psi1 == doctest::Approx(symbol_mass(1.5)).epsilon(1e-3));
  auto f = [](double x) { return std::cos(x); };
  auto fdd = [](double x) { return -std::cos(x); };
  const double err = generator_check(field, 0.0, f, fdd, 1e-2, 50000, opts);
  INFO("relative error ", err);
  CHECK(err < 0.1);
  CHECK_THROWS_AS(generator_check(field, 0.0, f, fdd, 1e-2, 500, opts),
                  std::invalid_argument);
}

TEST_CASE("generator check error halves with the step") {
  auto field = load("variable.json");
  SimulateOptions opts;
  opts.eps = 2e-3;
  opts.seed = 23;
  auto f = [](double x) { return std::cos(x); };
  auto fdd = [](double x) { return -std::cos(x); };
  const double e1 = generator_check(field, 0.3, f, fdd, 2e-2, 120000, opts);
  const double e2 = generator_check(field, 0.3, f, fdd, 1e-2, 120000, opts);
  INFO("e(2h)=", e1, " e(h)=", e2);
  // bias-dominated regime: ratio roughly two per halving, within wide noise
  CHECK(e1 / e2 > 1.2);
  CHECK(e1 / e2 < 3.0);
}

TEST_CASE("shared-driver refinement: zero drift collapses exactly") {
  auto field = load("constant.json");  // b == 0
  SimulateOptions opts;
  opts.eps = 2e-2;
  opts.horizon = 1.0;
  opts.seed = 31;
  auto rows = strong_cauchy(field, 0.0, {0.2, 0.1, 0.05}, 200, opts);
  for (const auto& r : rows) {
    CHECK(r.mean_sup_diff == 0.0);
  }
}

TEST_CASE("shared-driver refinement: lipschitz drift rate") {
  auto field = load("lipschitz_b.json");
  SimulateOptions opts;
  // moderate jump rate so the drift step is the binding discretization
  opts.eps = 0.6;
  opts.horizon = 1.0;
  opts.seed = 37;
  auto rows = strong_cauchy(field, 0.2, {0.2, 0.1, 0.05, 0.025}, 3000, opts);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const double factor = rows[i].mean_sup_diff / rows[i + 1].mean_sup_diff;
    INFO("halving ", i, " factor ", factor);
    CHECK(factor > 1.5);
    CHECK(factor < 2.5);
  }
}

TEST_CASE("shared-driver refinement: irregular drift still contracts") {
  auto field = load("holder.json");  // narrow smoothed indicator drift
  SimulateOptions opts;
  opts.eps = 0.5;
  opts.horizon = 1.0;
  opts.seed = 41;
  auto rows = strong_cauchy(field, 0.6, {0.2, 0.1, 0.05, 0.025, 0.0125},
                            2000, opts);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const double slack = 2.0 * (rows[i].std_error + rows[i + 1].std_error);
    INFO("level ", i, ": ", rows[i].mean_sup_diff, " -> ",
         rows[i + 1].mean_sup_diff);
    CHECK(rows[i + 1].mean_sup_diff <= rows[i].mean_sup_diff + slack);
  }
  CHECK_THROWS_AS(strong_cauchy(field, 0.0, {0.1, 0.2}, 10, opts),
                  std::invalid_argument);
}

TEST_CASE("cutoff refinement shrinks at the expected rate") {
  auto field = load("constant.json");
  SimulateOptions base;
  base.horizon = 0.25;
  base.seed = 53;
  std::vector<double> eps_list = {0.08, 0.04, 0.02, 0.01};
  std::vector<double> rms;
  for (double eps : eps_list) {
    SimulateOptions opts = base;
    opts.eps = 0.5 * eps;  // stream carries the finer level
    const int n = 1200;
    JumpSampler sampler(*field, opts.eps);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      SimulateOptions coarse = opts;
      coarse.z_floor = eps;
      PathRecord a = simulate_path(field, sampler, i, coarse);
      PathRecord b = simulate_path(field, sampler, i, opts);
      const double d = a.final_state() - b.final_state();
      acc += d * d;
    }
    rms.push_back(std::sqrt(acc / n));
  }
  // regression of log rms against log eps
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(eps_list.size());
  for (int i = 0; i < n; ++i) {
    sx += std::log(eps_list[i]);
    sy += std::log(rms[i]);
    sxx += std::log(eps_list[i]) * std::log(eps_list[i]);
    sxy += std::log(eps_list[i]) * std::log(rms[i]);
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  INFO("rms slope ", slope);
  CHECK(slope > (2.0 - 1.5) / 2.0 - 0.3);
  CHECK(slope < (2.0 - 1.5) / 2.0 + 0.3);
}

TEST_CASE("path functionals accumulate as integrals") {
  auto field = load("constant.json");  // zeta == 0
  SimulateOptions opts;
  opts.eps = 2e-2;
  opts.horizon = 1.0;
  opts.seed = 61;
  JumpSampler sampler(*field, opts.eps);
  PathRecord a = simulate_path(field, sampler, 0, opts);
  PathRecord b = simulate_path(field, sampler, 1, opts);
  // share the time grid: re-simulate b on a's times is not needed; the
  // functional only requires matching grids, so use two paths from the same
  // driver index with different accept outcomes is not available here. Use
  // the same path twice against itself for the degenerate contract and a
  // re-gridded pair for monotonicity.
  PathRecord a2 = a;
  diagnostics_A(*field, a, a2, nullptr);
  CHECK(!a.has_a2);
  CHECK(a.a1_values.back() ==
        doctest::Approx(opts.horizon).epsilon(1e-12));
  for (std::size_t i = 1; i < a.a1_values.size(); ++i) {
    CHECK(a.a1_values[i] >= a.a1_values[i - 1]);
  }
  (void)b;
}

TEST_CASE("path functionals with the transform increment weights") {
  auto field = load("holder.json");
  SimulateOptions opts;
  opts.eps = 2e-2;
  opts.horizon = 0.5;
  opts.seed = 67;
  JumpSampler sampler(*field, opts.eps);
  PathRecord a = simulate_path(field, sampler, 0, opts);
  PathRecord ahat = a;

  // a light accepted solution on a small table
  ParametrixGrids g = ParametrixGrids::standard(0.25, 1.0, 4, 10.0, 203);
  g.n_dense = 12;
  ParametrixBuilder pb(field, g);
  KernelTable tab = pb.heat_kernel(2);
  ZvonkinSolution sol = solve_resolvent(*field, tab, 1.0);
  diagnostics_A(*field, a, ahat, &sol, opts.eps);
  CHECK(a.has_a2);
  CHECK(a.a2_values.back() >= 0.0);
  for (std::size_t i = 1; i < a.a2_values.size(); ++i) {
    CHECK(a.a2_values[i] >= a.a2_values[i - 1]);
  }
  // A(t) = A1(t) + A2(t) dominates t
  const double A_end = a.a1_values.back() + a.a2_values.back();
  CHECK(A_end >= opts.horizon);
}

TEST_SUITE_END();
