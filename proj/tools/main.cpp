#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "stablesde/errors.hpp"
#include "stablesde/parallel.hpp"
#include "stablesde/parametrix.hpp"
#include "stablesde/report.hpp"
#include "stablesde/semigroup.hpp"
#include "stablesde/interp.hpp"
#include "stablesde/simulate.hpp"
#include "stablesde/special.hpp"
#include "stablesde/zvonkin.hpp"

using namespace stablesde;

namespace {

struct GridFlags {
  double t_min = 0.2, t_max = 1.0;
  int nt = 6;
  double L = 10.0;
  int nx = 235;
  int n_dense = 22;
  double s_min = 5e-3;
  int terms = 6;

  ParametrixGrids to_grids() const {
    ParametrixGrids g = ParametrixGrids::standard(t_min, t_max, nt, L, nx);
    g.n_dense = n_dense;
    g.s_min = s_min;
    return g;
  }
  void add_flags(CLI::App* cmd) {
    cmd->add_option("--t-min", t_min, "smallest table time");
    cmd->add_option("--t-max", t_max, "largest table time");
    cmd->add_option("--nt", nt, "number of table times");
    cmd->add_option("--window", L, "construction half-window");
    cmd->add_option("--nx", nx, "spatial nodes across the window");
    cmd->add_option("--n-dense", n_dense, "internal time nodes");
    cmd->add_option("--s-min", s_min, "smallest internal time");
    cmd->add_option("--terms", terms, "series iterates");
  }
};

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

RunManifest make_manifest(const std::string& cmd, const std::string& scen,
                          const nlohmann::json& params, std::uint64_t seed) {
  RunManifest m;
  m.command = cmd;
  m.scenario_path = scen;
  m.parameters = params;
  m.seed = seed;
  if (!scen.empty()) m.input_hashes.push_back({"scenario", hash_file(scen)});
  return m;
}

std::vector<ConvolutionSample> default_conv_samples(double offset) {
  std::vector<ConvolutionSample> s;
  for (int i = 0; i < 10; ++i) {
    s.push_back({0.7, -2.0 + 0.4 * i + offset, 0.1});
  }
  return s;
}

// Ratio-stability verification of the stable-kernel estimates on two
// disjoint log grids; returns the two reports.
std::pair<BoundReport, BoundReport> stable_bound_pair(
    double alpha, const std::string& which) {
  StableSpec spec;
  spec.alpha = alpha;
  StableKernel k(spec);
  auto fit = [&](double offset) {
    BoundReport rep;
    rep.bound_id = which;
    for (double t : {0.15, 0.5, 1.4}) {
      for (int i = 0; i < 8; ++i) {
        const double x = (0.04 + offset) * std::pow(2.2, i);
        double ratio = 0.0;
        if (which == "stable-two-sided") {
          const double p = k.density(t, x);
          const double r = RhoKernel{alpha, 0.0}.eval(alpha, t, x);
          ratio = std::max(p / r, r / p);
        } else if (which == "stable-grad") {
          ratio = std::abs(k.density_deriv(1, t, x)) /
                  RhoKernel{alpha - 1.0, 0.0}.eval(alpha, t, x);
        } else if (which == "stable-frac") {
          ratio = std::abs(k.frac_deriv(0.6, t, x)) /
                  RhoKernel{alpha - 0.6, 0.0}.eval(alpha, t, x);
        } else {
          throw std::invalid_argument("unknown stable bound id: " + which);
        }
        rep.samples++;
        if (ratio > rep.max_ratio) {
          rep.max_ratio = ratio;
          rep.argmax_t = t;
          rep.argmax_x = x;
        }
      }
    }
    return rep;
  };
  return {fit(0.0), fit(0.017)};
}

int cmd_kernel_build(const std::string& scenario, const GridFlags& gf,
                     const std::string& out, const std::string& stage,
                     ReportWriter& rw) {
  auto field = load_scenario(scenario);
  ParametrixBuilder builder(field, gf.to_grids());
  KernelTable table;
  if (stage == "q0") {
    table = builder.q0_table();
  } else if (stage == "q") {
    table = builder.q_table(gf.terms);
  } else if (stage == "p0") {
    table = builder.p0_table();
  } else {
    table = builder.heat_kernel(gf.terms);
  }
  const std::string path = out.empty() ? rw.dir() + "/kernel.ktab" : out;
  table.save(path);
  double worst = 0.0;
  if (table.stage == KernelStage::full) {
    for (std::size_t it = 0; it < table.nt(); ++it) {
      for (std::size_t ix = 0; ix < table.nx(); ix += 2) {
        worst = std::max(worst, std::abs(table.row_integral(it, ix) - 1.0));
      }
    }
  }
  nlohmann::json rep;
  rep["table"] = path;
  rep["stage"] = stage_name(table.stage);
  rep["residual"] = table.residual;
  rep["tail_exponent"] = table.tail_exponent;
  rep["worst_row_mass_deviation"] = worst;
  rep["scenario_hash"] = table.scenario_hash;
  RunManifest m = make_manifest("kernel build", scenario,
                                {{"stage", stage}, {"nx", gf.nx}}, 0);
  m.report_paths.push_back(rw.write_json("kernel_build.json", rep));
  rw.write_json("manifest_kernel_build.json", m.to_json());
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int cmd_kernel_verify(const std::string& scenario, const std::string& bound,
                      const std::string& table_path, double gamma,
                      ReportWriter& rw) {
  nlohmann::json rep;
  rep["bound_id"] = bound;
  bool stable_ok = true;
  if (bound == "stable-two-sided" || bound == "stable-grad" ||
      bound == "stable-frac") {
    double alpha = 1.5;
    if (!scenario.empty()) alpha = load_scenario(scenario)->alpha();
    auto [a, b] = stable_bound_pair(alpha, bound);
    rep["grid_a"] = bound_report_json(a);
    rep["grid_b"] = bound_report_json(b);
    stable_ok = (a.max_ratio / b.max_ratio < 2.0) &&
                (b.max_ratio / a.max_ratio < 2.0);
  } else if (bound == "conv-space" || bound == "conv-time-space") {
    double alpha = 1.5;
    if (!scenario.empty()) alpha = load_scenario(scenario)->alpha();
    RhoKernel r1{alpha, 0.0}, r2{alpha, 0.0};
    auto a = verify_3p(alpha, r1, r2, default_conv_samples(0.0), bound);
    auto b = verify_3p(alpha, r1, r2, default_conv_samples(0.13), bound);
    rep["grid_a"] = bound_report_json(a);
    rep["grid_b"] = bound_report_json(b);
    stable_ok = (a.max_ratio / b.max_ratio < 2.0) &&
                (b.max_ratio / a.max_ratio < 2.0);
  } else if (bound == "frozen-two-sided" || bound == "grad-p" ||
             bound == "frac-p" || bound == "grad-p-holder" ||
             bound == "q-rho") {
    if (table_path.empty()) {
      throw SchemaError("bound '" + bound + "' requires --table");
    }
    KernelTable table = KernelTable::load(table_path);
    auto a = verify_kernel_bounds(table, bound, gamma, 0.0);
    auto b = verify_kernel_bounds(table, bound, gamma, 0.5);
    rep["grid_a"] = bound_report_json(a);
    rep["grid_b"] = bound_report_json(b);
    stable_ok = (a.max_ratio / b.max_ratio < 2.0) &&
                (b.max_ratio / a.max_ratio < 2.0);
  } else {
    throw SchemaError("unknown bound id: " + bound);
  }
  rep["grid_stable"] = stable_ok;
  RunManifest m = make_manifest("kernel verify", scenario,
                                {{"bound", bound}}, 0);
  if (!table_path.empty()) {
    m.input_hashes.push_back({"table", hash_file(table_path)});
  }
  m.report_paths.push_back(
      rw.write_json("kernel_verify_" + bound + ".json", rep));
  rw.write_json("manifest_kernel_verify.json", m.to_json());
  std::cout << rep.dump(2) << "\n";
  return stable_ok ? 0 : 1;
}

int cmd_semigroup_slope(const std::string& scenario,
                        const std::string& estimate,
                        const std::string& table_path, const GridFlags& gf,
                        const SmoothingParams& params, ReportWriter& rw) {
  std::string which = estimate;
  if (estimate == "33") which = "grad-sup";
  if (estimate == "34") which = "grad-holder";
  if (estimate == "tt") which = "bessel";
  std::string internal = which;
  for (auto& ch : internal) {
    if (ch == '-') ch = '_';
  }
  auto field = load_scenario(scenario);
  KernelTable table;
  if (!table_path.empty()) {
    table = KernelTable::load(table_path);
  } else {
    ParametrixBuilder builder(field, gf.to_grids());
    table = builder.heat_kernel(gf.terms);
  }
  GriddedFunction probe = GriddedFunction::sample(
      table.x_grid,
      [&](double x) {
        return std::pow(std::abs(std::sin(x)), params.theta);
      });
  // sample the upper part of the time window, where the rough feature
  // dominates the smooth background
  std::vector<double> ts(table.t_grid.begin() + table.t_grid.size() / 3,
                         table.t_grid.end());
  SlopeFit fit = smoothing_exponent(table, probe, ts, internal, params);

  std::ostringstream csv;
  csv << "t,norm\n";
  for (std::size_t i = 0; i < fit.ts.size(); ++i) {
    csv << fit.ts[i] << "," << fit.norms[i] << "\n";
  }
  const std::string csv_path =
      rw.write_text("semigroup_slope_" + which + ".csv", csv.str());

  double predicted = 0.0;
  if (which == "grad-sup") predicted = (params.theta - 1.0) / field->alpha();
  if (which == "grad-holder") {
    predicted = (params.theta - params.theta_prime - 1.0) / field->alpha();
  }
  if (which == "bessel") predicted = -params.gamma / field->alpha();
  nlohmann::json rep;
  rep["estimate"] = which;
  rep["slope"] = fit.slope;
  rep["std_error"] = fit.std_err;
  rep["exact_zero"] = fit.exact_zero;
  rep["predicted_floor"] = predicted - 0.15;
  rep["csv"] = csv_path;
  const bool ok = fit.exact_zero || fit.slope >= predicted - 0.15;
  rep["pass"] = ok;
  RunManifest m = make_manifest("semigroup slope", scenario,
                                {{"estimate", which}}, 0);
  m.report_paths.push_back(
      rw.write_json("semigroup_slope_" + which + ".json", rep));
  rw.write_json("manifest_semigroup_slope.json", m.to_json());
  std::cout << rep.dump(2) << "\n";
  return ok ? 0 : 1;
}

void write_solution_table(const ZvonkinSolution& sol,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  const char magic[8] = {'S', 'D', 'E', 'U', 'T', 'B', 'L', '1'};
  out.write(magic, 8);
  const std::uint64_t n = sol.u.size();
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(sol.u.x_grid.data()),
            static_cast<std::streamsize>(n * 8));
  out.write(reinterpret_cast<const char*>(sol.u.values.data()),
            static_cast<std::streamsize>(n * 8));
  out.write(reinterpret_cast<const char*>(sol.grad_u.values.data()),
            static_cast<std::streamsize>(n * 8));
}

nlohmann::json solution_json(const ZvonkinSolution& sol) {
  nlohmann::json j;
  j["lambda"] = sol.lambda;
  j["iterations"] = sol.iterations;
  j["final_increment"] = sol.final_increment;
  j["sup_u"] = sol.sup_u;
  j["sup_grad_u"] = sol.sup_grad_u;
  j["accepted"] = sol.accepted;
  return j;
}

int cmd_zvonkin_solve(const std::string& scenario, double lambda_init,
                      const std::string& table_path, const GridFlags& gf,
                      ReportWriter& rw) {
  auto field = load_scenario(scenario);
  KernelTable table;
  if (!table_path.empty()) {
    table = KernelTable::load(table_path);
  } else {
    ParametrixBuilder builder(field, gf.to_grids());
    table = builder.heat_kernel(gf.terms);
  }
  ZvonkinSolution sol = solve_resolvent(*field, table, lambda_init);
  const double residual = resolvent_residual(*field, table, sol);
  nlohmann::json rep = solution_json(sol);
  rep["fixed_point_residual"] = residual;
  const std::string upath = rw.dir() + "/zvonkin_u.bin";
  write_solution_table(sol, upath);
  rep["u_table"] = upath;
  RunManifest m = make_manifest("zvonkin solve", scenario,
                                {{"lambda_init", lambda_init}}, 0);
  m.report_paths.push_back(rw.write_json("zvonkin_solution.json", rep));
  rw.write_json("manifest_zvonkin_solve.json", m.to_json());
  std::cout << rep.dump(2) << "\n";
  return sol.accepted ? 0 : 1;
}

int cmd_zvonkin_verify(const std::string& scenario, double lambda_init,
                       const std::string& table_path, const GridFlags& gf,
                       ReportWriter& rw) {
  auto field = load_scenario(scenario);
  KernelTable table;
  if (!table_path.empty()) {
    table = KernelTable::load(table_path);
  } else {
    ParametrixBuilder builder(field, gf.to_grids());
    table = builder.heat_kernel(gf.terms);
  }
  ZvonkinSolution sol = solve_resolvent(*field, table, lambda_init);
  TransformedCoefficients tc = build_transform(sol, *field);

  bool ok = sol.accepted;
  nlohmann::json rep = solution_json(sol);
  // bi-Lipschitz band over grid pairs
  double qmin = 1e300, qmax = 0.0;
  const auto& grid = sol.u.x_grid;
  for (std::size_t i = 0; i < grid.size(); i += 2) {
    for (std::size_t j = i + 1; j < grid.size(); j += 2) {
      const double q = std::abs(tc.phi_fwd(grid[j]) - tc.phi_fwd(grid[i])) /
                       (grid[j] - grid[i]);
      qmin = std::min(qmin, q);
      qmax = std::max(qmax, q);
    }
  }
  rep["bilipschitz"] = {{"min", qmin}, {"max", qmax}};
  ok = ok && qmin >= 0.45 && qmax <= 1.55;
  BoundReport b1 = verify_coefficient_estimates(tc, sol, *field, "b-lip", 11);
  BoundReport b2 = verify_coefficient_estimates(tc, sol, *field, "b-lip", 99);
  BoundReport g1 = verify_coefficient_estimates(tc, sol, *field, "g-lip", 5);
  BoundReport g2 = verify_coefficient_estimates(tc, sol, *field, "g-lip", 77);
  rep["drift_lipschitz"] = {bound_report_json(b1), bound_report_json(b2)};
  rep["jump_lipschitz"] = {bound_report_json(g1), bound_report_json(g2)};
  ok = ok && b1.max_ratio / b2.max_ratio < 2.0 &&
       b2.max_ratio / b1.max_ratio < 2.0;
  SlopeFit jz = increment_norm_decay(sol, field->sobolev().p);
  rep["increment_decay_exponent"] = jz.slope;
  ok = ok && jz.slope >= 1.3 - 1.0 - 0.15;
  rep["pass"] = ok;
  RunManifest m = make_manifest("zvonkin verify", scenario,
                                {{"lambda_init", lambda_init}}, 0);
  m.report_paths.push_back(rw.write_json("zvonkin_verify.json", rep));
  rw.write_json("manifest_zvonkin_verify.json", m.to_json());
  std::cout << rep.dump(2) << "\n";
  return ok ? 0 : 1;
}

int cmd_simulate(const std::string& scenario, std::int64_t paths,
                 std::uint64_t seed, double eps, double dt, double horizon,
                 double x0, const std::string& out_csv,
                 const std::string& kernel_path, ReportWriter& rw) {
  auto field = load_scenario(scenario);
  SimulateOptions opts;
  opts.eps = eps;
  opts.dt_drift = dt;
  opts.horizon = horizon;
  opts.x0 = x0;
  opts.seed = seed;
  const double t0 = now_seconds();
  FarmSummary farm = simulate_endpoints(field, paths, opts);
  const double runtime = now_seconds() - t0;

  nlohmann::json summary;
  summary["mean"] = farm.mean;
  summary["var"] = farm.var;
  if (!kernel_path.empty()) {
    KernelTable table = KernelTable::load(kernel_path);
    std::size_t it = table.nt() - 1;
    for (std::size_t k = 0; k < table.nt(); ++k) {
      if (std::abs(table.t_grid[k] - horizon) < 1e-9) it = k;
    }
    std::size_t ix = 0;
    for (std::size_t k = 0; k < table.nx(); ++k) {
      if (std::abs(table.x_grid[k] - x0) <
          std::abs(table.x_grid[ix] - x0)) {
        ix = k;
      }
    }
    auto cdf_vals = table.cdf_row(it, ix);
    const double total = table.row_integral(it, ix);
    auto ygrid = table.y_grid;
    auto cdf = [cdf_vals, ygrid, total](double v) {
      return std::clamp(lerp_grid(ygrid, cdf_vals, v) / total, 0.0, 1.0);
    };
    summary["ks_vs_kernel"] = ks_distance(farm.endpoints, cdf);
  } else {
    summary["ks_vs_kernel"] = nullptr;
  }
  summary["runtime"] = runtime;

  if (!out_csv.empty()) {
    JumpSampler sampler(*field, opts.eps);
    PathRecord rec = simulate_path(field, sampler, 0, opts);
    std::ostringstream csv;
    csv << "t,x,jump_z,jump_r,accepted\n";
    std::size_t j = 0;
    for (std::size_t i = 0; i < rec.times.size(); ++i) {
      csv << rec.times[i] << "," << rec.states[i];
      if (j < rec.jump_log.size() && rec.jump_log[j].t == rec.times[i]) {
        csv << "," << rec.jump_log[j].z << "," << rec.jump_log[j].r << ","
            << (rec.jump_log[j].accepted ? 1 : 0);
        ++j;
      } else {
        csv << ",,,";
      }
      csv << "\n";
    }
    rw.write_text(out_csv, csv.str());
  }
  RunManifest m = make_manifest(
      "simulate", scenario,
      {{"paths", paths}, {"eps", eps}, {"dt", dt}, {"horizon", horizon}},
      seed);
  if (!kernel_path.empty()) {
    m.input_hashes.push_back({"kernel", hash_file(kernel_path)});
  }
  m.report_paths.push_back(rw.write_json("simulate_summary.json", summary));
  rw.write_json("manifest_simulate.json", m.to_json());
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_suite(const std::string& scenario, bool quick, ReportWriter& rw) {
  auto field = load_scenario(scenario);
  nlohmann::json rep;
  bool all_ok = true;
  auto check = [&](const std::string& name, bool ok, nlohmann::json detail) {
    detail["pass"] = ok;
    rep[name] = detail;
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
  };

  // kernel stage
  GridFlags gf;
  gf.t_min = 0.25;
  gf.nt = quick ? 4 : 6;
  gf.nx = 203;
  gf.n_dense = quick ? 12 : 20;
  gf.s_min = 6e-3;
  gf.terms = quick ? 3 : 6;
  ParametrixBuilder builder(field, gf.to_grids());
  KernelTable table = builder.heat_kernel(gf.terms);
  double worst = 0.0;
  for (std::size_t it = 0; it < table.nt(); ++it) {
    for (std::size_t ix = 0; ix < table.nx(); ix += 4) {
      worst = std::max(worst, std::abs(table.row_integral(it, ix) - 1.0));
    }
  }
  check("kernel_normalization", worst < 1e-2, {{"worst", worst}});
  if (field->sigma_x_independent()) {
    KernelTable p0 = builder.p0_table();
    double diff = 0.0;
    for (std::size_t i = 0; i < table.values.size(); ++i) {
      diff = std::max(diff, std::abs(table.values[i] - p0.values[i]));
    }
    check("kernel_constant_collapse", diff < 1e-6, {{"sup_diff", diff}});
  } else {
    auto a = verify_kernel_bounds(table, "grad-p", 0.2, 0.0);
    auto b = verify_kernel_bounds(table, "grad-p", 0.2, 0.5);
    check("kernel_gradient_bound",
          a.max_ratio / b.max_ratio < 2.0 && b.max_ratio / a.max_ratio < 2.0,
          {{"ratio_a", a.max_ratio}, {"ratio_b", b.max_ratio}});
  }

  // semigroup stage
  GriddedFunction probe = GriddedFunction::sample(
      table.x_grid,
      [](double x) { return std::pow(std::abs(std::sin(x)), 0.5); });
  std::vector<double> ts(table.t_grid.begin() + table.t_grid.size() / 3,
                         table.t_grid.end());
  if (ts.size() >= 4) {
    SlopeFit fit = smoothing_exponent(table, probe, ts, "grad_sup");
    const double floor = (0.5 - 1.0) / field->alpha() - 0.15;
    check("semigroup_gradient_slope",
          fit.exact_zero || fit.slope >= floor,
          {{"slope", fit.slope}, {"floor", floor}});
  }

  // zvonkin stage
  ZvonkinSolution sol = solve_resolvent(*field, table, 1.0);
  const double res = resolvent_residual(*field, table, sol);
  check("zvonkin_gate",
        sol.accepted && res < 2e-8,
        {{"lambda", sol.lambda},
         {"sup_u", sol.sup_u},
         {"sup_grad_u", sol.sup_grad_u},
         {"residual", res}});

  // simulate stage
  SimulateOptions opts;
  opts.eps = 1e-2;
  opts.horizon = quick ? 0.25 : 0.5;
  opts.seed = 7;
  const std::int64_t n_paths = quick ? 2000 : 8000;
  FarmSummary f1 = simulate_endpoints(field, n_paths, opts);
  FarmSummary f2 = simulate_endpoints(field, n_paths, opts);
  check("simulate_determinism",
        f1.endpoints == f2.endpoints && f1.mean == f2.mean,
        {{"mean", f1.mean}, {"var", f1.var}});

  rep["scenario_hash"] = field->content_hash();
  RunManifest m = make_manifest("suite", scenario, {{"quick", quick}}, 7);
  m.report_paths.push_back(rw.write_json("suite_report.json", rep));
  rw.write_json("manifest_suite.json", m.to_json());
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stable-like SDE toolkit: kernels, transforms, simulation"};
  app.require_subcommand(1);
  int threads = 0;
  std::string report_dir;
  app.add_option("--threads", threads, "worker cap (0 = hardware)");
  app.add_option("--report-dir", report_dir,
                 "report directory (default SDE_REPORT_DIR or ./reports)");

  std::string scenario, table_path, out, bound, estimate, stage = "full";
  std::string out_csv, kernel_path;
  GridFlags gf;
  SmoothingParams sparams;
  double lambda_init = 1.0, gamma = 0.2;
  std::int64_t paths = 10000;
  std::uint64_t seed = 1;
  double eps = 1e-3, dt = 1e-2, horizon = 1.0, x0 = 0.0;
  bool quick = false;

  auto* kernel = app.add_subcommand("kernel", "heat kernel tables");
  auto* kbuild = kernel->add_subcommand("build", "build a kernel table");
  kbuild->add_option("--scenario", scenario)->required();
  kbuild->add_option("--out", out);
  kbuild->add_option("--stage", stage)
      ->check(CLI::IsMember({"full", "q0", "q", "p0"}));
  gf.add_flags(kbuild);
  auto* kverify = kernel->add_subcommand("verify", "verify a kernel bound");
  kverify->add_option("--scenario", scenario);
  kverify->add_option("--bound", bound)->required();
  kverify->add_option("--table", table_path);
  kverify->add_option("--gamma", gamma);

  auto* semi = app.add_subcommand("semigroup", "semigroup diagnostics");
  auto* slope = semi->add_subcommand("slope", "smoothing exponent");
  slope->add_option("--scenario", scenario)->required();
  slope->add_option("--estimate", estimate)->required();
  slope->add_option("--table", table_path);
  slope->add_option("--theta", sparams.theta);
  slope->add_option("--theta-prime", sparams.theta_prime);
  slope->add_option("--slope-gamma", sparams.gamma);
  slope->add_option("--p", sparams.p);
  gf.add_flags(slope);

  auto* zv = app.add_subcommand("zvonkin", "drift-removing transform");
  auto* zsolve = zv->add_subcommand("solve", "resolvent fixed point");
  zsolve->add_option("--scenario", scenario)->required();
  zsolve->add_option("--lambda-init", lambda_init);
  zsolve->add_option("--table", table_path);
  gf.add_flags(zsolve);
  auto* zverify = zv->add_subcommand("verify", "transform estimates");
  zverify->add_option("--scenario", scenario)->required();
  zverify->add_option("--lambda-init", lambda_init);
  zverify->add_option("--table", table_path);
  gf.add_flags(zverify);

  auto* sim = app.add_subcommand("simulate", "path simulation by thinning");
  sim->add_option("--scenario", scenario)->required();
  sim->add_option("--paths", paths);
  sim->add_option("--seed", seed);
  sim->add_option("--eps", eps);
  sim->add_option("--dt", dt);
  sim->add_option("--horizon", horizon);
  sim->add_option("--x0", x0);
  sim->add_option("--out", out_csv);
  sim->add_option("--kernel", kernel_path);

  auto* suite = app.add_subcommand("suite", "full verification battery");
  suite->add_option("--scenario", scenario)->required();
  suite->add_flag("--quick", quick);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (threads > 0) set_max_threads(threads);
  try {
    ReportWriter rw(report_dir);
    if (kbuild->parsed()) {
      return cmd_kernel_build(scenario, gf, out, stage, rw);
    }
    if (kverify->parsed()) {
      return cmd_kernel_verify(scenario, bound, table_path, gamma, rw);
    }
    if (slope->parsed()) {
      return cmd_semigroup_slope(scenario, estimate, table_path, gf, sparams,
                                 rw);
    }
    if (zsolve->parsed()) {
      return cmd_zvonkin_solve(scenario, lambda_init, table_path, gf, rw);
    }
    if (zverify->parsed()) {
      return cmd_zvonkin_verify(scenario, lambda_init, table_path, gf, rw);
    }
    if (sim->parsed()) {
      return cmd_simulate(scenario, paths, seed, eps, dt, horizon, x0,
                          out_csv, kernel_path, rw);
    }
    if (suite->parsed()) {
      return cmd_suite(scenario, quick, rw);
    }
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what()
              << " (residual " << e.residual() << ")\n";
    return 3;
  }
  return 2;
}
