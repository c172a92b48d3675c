#include <doctest.h>

#include <cmath>

#include "stablesde/frozen.hpp"
#include "stablesde/quadrature.hpp"
#include "stablesde/rng.hpp"
#include "stablesde/special.hpp"

using namespace stablesde;

namespace {

FieldPtr load(const char* name) {
  return load_scenario(std::string(SCENARIO_DIR) + "/" + name);
}

// brute-force quadrature of the symbol normalization integral
double symbol_mass_oracle(double alpha) {
  auto f = [&](double u) {
    const double s = std::sin(0.5 * u);
    return 2.0 * s * s * std::pow(u, -1.0 - alpha);
  };
  double acc = 0.5 * std::pow(1e-9, 2.0 - alpha) / (2.0 - alpha);
  acc += gauss_panels(f, geometric_edges(1e-9, 0.5, 60));
  acc += gauss_panels(f, uniform_edges(0.5, 400.0, 1600));
  acc += std::pow(400.0, -alpha) / alpha;  // oscillation averages out
  return 2.0 * acc;
}

}  // namespace

TEST_SUITE_BEGIN("frozen");

TEST_CASE("scenario schema diagnostics") {
  CHECK_THROWS_AS(load_scenario("/nonexistent/file.json"), SchemaError);
  auto field = load("constant.json");
  CHECK(field->alpha() == doctest::Approx(1.5));
  CHECK(field->sigma(0.3, 0.7) == doctest::Approx(1.0));
  CHECK(field->sigma_x_independent());
  auto holder = load("holder.json");
  CHECK(!holder->sigma_x_independent());
  for (double x : {-3.0, 0.2, 5.0}) {
    for (double z : {0.1, 2.0}) {
      CHECK(holder->sigma(x, z) >= 1.0);
      CHECK(holder->sigma(x, z) <= 1.35);
      CHECK(holder->sigma(x, z) == holder->sigma(x, -z));
    }
  }
}

TEST_CASE("jump measure tail mass against the closed form") {
  auto field = load("constant.json");
  const double eps = 1e-2;
  const double expected = 2.0 * std::pow(eps, -1.5) / 1.5;
  CHECK(field->nu_tail_mass(eps) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("lipschitz weight condition fitted constant is finite") {
  auto holder = load("holder.json");
  const double c = holder->check_lipschitz_weight(160, 99);
  CHECK(std::isfinite(c));
  CHECK(c > 0.0);
  // x-independent coefficient: the quotient vanishes identically
  auto cst = load("constant.json");
  CHECK(cst->check_lipschitz_weight(60, 7) == doctest::Approx(0.0));
}

TEST_CASE("characteristic exponent: zero at origin, even, nonnegative") {
  auto holder = load("holder.json");
  FrozenKernel k(holder, 0.4);
  CHECK(k.psi(0.0) == 0.0);
  Rng rng(13);
  for (int i = 0; i < 10; ++i) {
    const double xi = (rng.uniform() - 0.5) * 40.0;
    CHECK(k.psi(xi) >= 0.0);
    CHECK(k.psi(xi) == doctest::Approx(k.psi(-xi)).epsilon(1e-12));
  }
}

TEST_CASE("constant coefficient symbol reduces to the power law") {
  auto field = load("constant.json");
  FrozenKernel k(field, 0.0);
  const double A = symbol_mass_oracle(1.5);
  CHECK(A == doctest::Approx(symbol_mass(1.5)).epsilon(1e-5));
  for (double xi : {0.3, 1.0, 4.7, 20.0}) {
    CHECK(k.psi(xi) ==
          doctest::Approx(A * std::pow(xi, 1.5)).epsilon(2e-4));
  }
}

TEST_CASE("frozen density reduces to the scaled stable density") {
  auto field = load("constant.json");
  FrozenKernel k(field, 1.0);
  StableSpec spec;
  spec.alpha = 1.5;
  spec.scale = symbol_mass(1.5);
  StableKernel ref(spec);
  for (double t : {0.1, 0.5, 1.0}) {
    const double sc = std::pow(spec.scale * t, 1.0 / 1.5);
    for (double m : {0.0, 0.5, 1.5, 3.0, 6.0}) {
      const double x = m * sc;
      const double a = k.density(t, x), b = ref.density(t, x);
      CHECK(a == doctest::Approx(b).epsilon(1e-4));
    }
  }
}

TEST_CASE("frozen density: normalization and symmetry") {
  auto holder = load("holder.json");
  FrozenKernel k(holder, -0.7);
  for (double t : {0.3, 1.0}) {
    const double R = 60.0;
    const int n = 4000;
    std::vector<double> vals(2 * n + 1);
    const double h = R / n;
    for (int i = -n; i <= n; ++i) {
      vals[static_cast<std::size_t>(i + n)] = k.density(t, i * h);
    }
    double mass = simpson_uniform(vals, h);
    const double p1 = k.density(t, R), p2 = k.density(t, 1.3 * R);
    const double e = -std::log(p2 / p1) / std::log(1.3);
    mass += 2.0 * p1 * R / (e - 1.0);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(k.density(0.7, 1.9) == doctest::Approx(k.density(0.7, -1.9)).epsilon(1e-10));
}

TEST_CASE("flat-part decomposition residual") {
  auto field = load("constant.json");
  FrozenKernel k(field, 0.0);
  // flat split takes exactly half of the constant symbol
  CHECK(k.psi_hat(1.0) == doctest::Approx(0.5 * k.psi(1.0)).epsilon(1e-4));
  for (double x : {0.0, 0.8, 2.5}) {
    CHECK(k.decompose_residual(0.5, x) < 1e-4);
  }
  // residual is symmetric in x
  CHECK(k.decompose_residual(0.5, 1.2) ==
        doctest::Approx(k.decompose_residual(0.5, -1.2)).epsilon(1e-6));
}

TEST_CASE("decomposition residual for a variable coefficient") {
  auto holder = load("holder.json");
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    const double y = (rng.uniform() - 0.5) * 4.0;
    const double t = 0.3 + 0.7 * rng.uniform();
    const double x = (rng.uniform() - 0.5) * 5.0;
    FrozenKernel k(holder, y);
    CHECK(k.decompose_residual(t, x) < 1e-3);
  }
}

TEST_CASE("operator application on reference functions") {
  auto field = load("constant.json");
  FrozenKernel k(field, 0.0);
  const double psi1 = k.psi(1.0);
  // cosine eigenfunction
  auto cosf = [](double x) { return std::cos(x); };
  for (double x : {0.0, 0.9}) {
    CHECK(k.apply(cosf, x) ==
          doctest::Approx(-psi1 * std::cos(x)).epsilon(2e-3));
  }
  // constants are annihilated
  auto one = [](double) { return 1.0; };
  CHECK(std::abs(k.apply(one, 0.3)) < 1e-12);
  // linear functions: symmetric differences vanish
  auto lin = [](double x) { return x; };
  CHECK(std::abs(k.apply(lin, 0.4)) < 1e-10);
}

TEST_CASE("fourier modes reproduce the symbol") {
  auto holder = load("holder.json");
  FrozenKernel k(holder, 0.6);
  for (double xi : {0.5, 2.0, 5.0}) {
    auto mode = [xi](double x) { return std::cos(xi * x); };
    const double x = 0.35;
    const double lhs = k.apply(mode, x);
    const double rhs = -k.psi(xi) * std::cos(xi * x);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-3));
  }
}

TEST_CASE("two-sided comparison constants stable across freeze points") {
  auto holder = load("holder.json");
  auto fit = [&](double offset, bool upper) {
    double c = 0.0;
    for (double y : {-2.1, -0.4, 0.0, 0.9, 2.6}) {
      FrozenKernel k(holder, y);
      for (double t : {0.2, 0.8}) {
        for (int i = 0; i < 6; ++i) {
          const double x = (0.05 + offset) * std::pow(2.4, i);
          const double p = k.density(t, x);
          const double r = RhoKernel{1.5, 0.0}.eval(1.5, t, x);
          c = std::max(c, upper ? p / r : r / p);
        }
      }
    }
    return c;
  };
  CHECK(fit(0.0, true) / fit(0.02, true) < 2.0);
  CHECK(fit(0.02, true) / fit(0.0, true) < 2.0);
  CHECK(fit(0.0, false) / fit(0.02, false) < 2.0);
  CHECK(fit(0.02, false) / fit(0.0, false) < 2.0);
}

TEST_CASE("generator and semigroup are consistent") {
  auto holder = load("holder.json");
  FrozenKernel k(holder, 0.0);
  const double h = 1e-3;
  for (auto [t, x] : {std::pair{0.4, 0.0}, {0.4, 0.9}, {0.9, -1.3}}) {
    const double dt = (k.density(t + h, x) - k.density(t, x)) / h;
    auto row = [&](double u) { return k.density(t, u); };
    const double gen = k.apply(row, x);
    CHECK(dt == doctest::Approx(gen).epsilon(0.02));
  }
}

TEST_SUITE_END();
