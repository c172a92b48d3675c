#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace stablesde {

// Problem instance: jump coefficient sigma(x, z), jump-measure density factor
// kappa_tilde(z), drift b(x), Lipschitz weight zeta(x), plus the global
// bounds and integrability exponents the solvers rely on. Every member
// function is const and the object is immutable after construction, so a
// field can be shared freely across threads.
class CoefficientField {
public:
  struct Bounds {
    double k0 = 1.0, k1 = 1.0;        // sigma range
    double kappa0 = 1.0, kappa1 = 1.0;  // kappa_tilde range
  };
  struct Sobolev {
    double theta = 0.6;
    double p = 3.0;
  };

  static CoefficientField from_json(const nlohmann::json& j);
  static CoefficientField from_file(const std::string& path);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  const Bounds& bounds() const { return bounds_; }
  const Sobolev& sobolev() const { return sobolev_; }
  double q_zeta() const { return q_zeta_; }
  double b_sup() const { return b_sup_; }

  double sigma(double x, double z) const;
  double kappa_tilde(double z) const;
  double kappa(double x, double z) const { return sigma(x, z) * kappa_tilde(z); }
  double drift(double x) const;
  double zeta(double x) const;

  // sigma(x, z) = sigma_base(z) + sigma_x(x) * sigma_z(z) for every catalog
  // family; the decomposition lets symbol tables be shared across freeze
  // points.
  double sigma_base(double z) const;
  double sigma_x(double x) const;
  double sigma_z(double z) const;
  bool sigma_x_independent() const;

  // Jump measure nu(dz) = kappa_tilde(z) |z|^(-1-alpha) dz helpers.
  double nu_tail_mass(double eps) const;  // nu({|z| > eps})

  // Statistical spot check of the Lipschitz-with-weight condition on sampled
  // pairs; returns the fitted constant (max over samples of the quotient).
  double check_lipschitz_weight(int n_pairs, std::uint64_t seed) const;

  const std::string& label() const { return label_; }
  std::uint64_t content_hash() const { return hash_; }
  nlohmann::json to_json() const;

private:
  CoefficientField() = default;
  void validate() const;

  double alpha_ = 1.5, beta_ = 0.45;
  Bounds bounds_;
  Sobolev sobolev_;
  double q_zeta_ = 1.5;
  double b_sup_ = 0.0;
  std::string label_;
  std::uint64_t hash_ = 0;

  struct Family {
    std::string kind;
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  };
  Family sigma_fam_, kappa_fam_, b_fam_, zeta_fam_;
  double beta_holder_ = 0.45;  // spatial Hoelder exponent used by sigma
  double sigma_zpow_ = 0.7;    // z-grading exponent of the jump_graded family
};

using FieldPtr = std::shared_ptr<const CoefficientField>;

FieldPtr load_scenario(const std::string& path);

// FNV-1a over a byte buffer; used for scenario/content hashes in reports.
std::uint64_t fnv1a(const void* data, std::size_t n);

}  // namespace stablesde
