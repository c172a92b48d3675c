#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stablesde/frozen.hpp"
#include "stablesde/rng.hpp"
#include "stablesde/scenario.hpp"
#include "stablesde/semigroup.hpp"
#include "stablesde/zvonkin.hpp"

namespace stablesde {

// Inverse-CDF sampler for the jump measure restricted to {|z| > eps},
// tabulated once per (field, eps) and shared across paths.
class JumpSampler {
public:
  JumpSampler(const CoefficientField& field, double eps);
  double total_rate_factor() const { return tail_mass_; }  // nu({|z|>eps})
  // u in [0,1) selects the magnitude, sign_u in [0,1) the sign.
  double sample(double u, double sign_u) const;

private:
  std::vector<double> log_z_, cdf_;
  double tail_mass_ = 0.0;
};

// Ordered candidate marks (t_i, z_i, r_i): exponential time increments at
// the dominating rate k1 * nu({|z| > eps}), magnitudes from the normalized
// restricted jump measure, and thinning levels r uniform on [0, k1]. A
// deterministic function of (seed, path index, eps, horizon, field bounds).
class DriverStream {
public:
  DriverStream(FieldPtr field, const JumpSampler* sampler, std::uint64_t seed,
               std::uint64_t path_index, double eps, double horizon);

  struct Candidate {
    double t, z, r;
  };
  bool next(Candidate* c);
  double rate() const { return rate_; }
  double eps() const { return eps_; }
  double horizon() const { return horizon_; }

private:
  FieldPtr field_;
  const JumpSampler* sampler_;
  Rng rng_;
  double eps_, horizon_, rate_, t_ = 0.0;
};

struct JumpEvent {
  double t, z, r;
  bool accepted;
};

struct PathRecord {
  std::vector<double> times;   // candidate times plus the horizon
  std::vector<double> states;  // state right after each time
  std::vector<JumpEvent> jump_log;
  std::vector<double> a1_values;
  std::vector<double> a2_values;
  bool has_a2 = false;
  double final_state() const { return states.back(); }
};

struct SimulateOptions {
  double eps = 1e-3;
  double dt_drift = 1e-2;
  double horizon = 1.0;
  double x0 = 0.0;
  std::uint64_t seed = 1;
  // Ignore candidates with |z| <= z_floor on top of the stream's own cutoff;
  // used by the cutoff-refinement coupling.
  double z_floor = 0.0;
};

// Strong path simulation by thinning: drift Euler stepping between candidate
// times, acceptance iff r <= sigma(state-, z). The symmetric small-jump
// compensator vanishes, so no drift correction is added. Throws
// NumericalError (with the time) if the state leaves the finite range.
PathRecord simulate_path(FieldPtr field, const JumpSampler& sampler,
                         std::uint64_t path_index,
                         const SimulateOptions& opts);

struct FarmSummary {
  double mean = 0.0;
  double var = 0.0;
  std::int64_t n_paths = 0;
  std::vector<double> endpoints;  // in path order
};

// Endpoint farm over paths 0..n-1 with per-path substreams; the reduction
// runs over a fixed block partition so thread count does not affect results.
FarmSummary simulate_endpoints(FieldPtr field, std::int64_t n_paths,
                               const SimulateOptions& opts);

// |(E f(X_h) - f(x)) / h - L f(x)| / (|L f(x)| + 1e-9) with L the frozen
// generator at x plus the drift term. Refuses n_paths < 1000.
double generator_check(FieldPtr field, double x,
                       const std::function<double(double)>& f,
                       const std::function<double(double)>& f_dd,
                       double h, std::int64_t n_paths,
                       const SimulateOptions& opts);

struct CauchyRow {
  double dt_coarse, dt_fine;
  double mean_sup_diff;
  double std_error;
};

// Shared-driver mesh refinement: for each seed the same candidate sequence
// drives every drift step size; rows report E sup |X^(dt) - X^(dt/2)|.
std::vector<CauchyRow> strong_cauchy(FieldPtr field, double x0,
                                     const std::vector<double>& dt_list,
                                     std::int64_t n_seeds,
                                     const SimulateOptions& opts);

// Path functionals: a1 integrates 1 + zeta(X) + zeta(X_hat); a2 integrates
// the squared maximal-gradient increments of u against the jump measure over
// eps < |z| <= 1. Requires both records to share the time grid.
void diagnostics_A(const CoefficientField& field, PathRecord& path,
                   PathRecord& path_hat, const ZvonkinSolution* u_sol,
                   double eps = 1e-3);

// Kolmogorov-Smirnov distance between samples and a reference CDF.
double ks_distance(std::vector<double> samples,
                   const std::function<double(double)>& cdf);

// CDF of a density given by a callable, assembled on a grid with power tails.
std::function<double(double)> cdf_from_density(
    const std::function<double(double)>& density, double x_lo, double x_hi,
    int n, double tail_exponent);

}  // namespace stablesde
