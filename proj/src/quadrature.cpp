#include "stablesde/quadrature.hpp"

#include <array>
#include <cmath>

namespace stablesde {

namespace {

struct SimpsonCell {
  double a, b, fa, fm, fb, whole;
};

double simpson_cell(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_step(const std::function<double(double)>& f,
                     const SimpsonCell& c, double tol, int depth,
                     int max_depth, double& err_acc) {
  const double m = 0.5 * (c.a + c.b);
  const double lm = 0.5 * (c.a + m), rm = 0.5 * (m + c.b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson_cell(c.a, m, c.fa, flm, c.fm);
  const double right = simpson_cell(m, c.b, c.fm, frm, c.fb);
  const double delta = left + right - c.whole;
  if (depth >= max_depth || std::abs(delta) <= 15.0 * tol) {
    err_acc += std::abs(delta) / 15.0;
    return left + right + delta / 15.0;
  }
  const double lv = adaptive_step(f, {c.a, m, c.fa, flm, c.fm, left}, tol / 2,
                                  depth + 1, max_depth, err_acc);
  const double rv = adaptive_step(f, {m, c.b, c.fm, frm, c.fb, right}, tol / 2,
                                  depth + 1, max_depth, err_acc);
  return lv + rv;
}

}  // namespace

QuadratureResult adaptive_simpson(const std::function<double(double)>& f,
                                  double a, double b, double rel_tol,
                                  double abs_tol, int max_depth) {
  if (!(a < b)) return {0.0, 0.0};
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = simpson_cell(a, b, fa, fm, fb);
  const double tol = std::max(abs_tol, std::abs(whole) * rel_tol);
  double err = 0.0;
  const double v =
      adaptive_step(f, {a, b, fa, fm, fb, whole}, tol, 0, max_depth, err);
  const double bound = std::max(abs_tol, std::abs(v) * rel_tol) * 4.0;
  if (!std::isfinite(v) || err > bound) {
    throw NumericalError("quadrature failed to converge", err);
  }
  return {v, err};
}

double gauss_panels(const std::function<double(double)>& f,
                    const std::vector<double>& edges) {
  // 7-point Gauss-Legendre nodes/weights on [-1, 1].
  static const std::array<double, 7> xs = {
      -0.9491079123427585, -0.7415311855993945, -0.4058451513773972, 0.0,
      0.4058451513773972,  0.7415311855993945,  0.9491079123427585};
  static const std::array<double, 7> ws = {
      0.1294849661688697, 0.2797053914892766, 0.3818300505051189,
      0.4179591836734694, 0.3818300505051189, 0.2797053914892766,
      0.1294849661688697};
  double total = 0.0;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double a = edges[p], b = edges[p + 1];
    const double c = 0.5 * (a + b), hw = 0.5 * (b - a);
    double acc = 0.0;
    for (int i = 0; i < 7; ++i) acc += ws[i] * f(c + hw * xs[i]);
    total += acc * hw;
  }
  return total;
}

std::vector<double> geometric_edges(double a, double b, int n) {
  std::vector<double> e(n + 1);
  const double r = std::log(b / a) / n;
  for (int i = 0; i <= n; ++i) e[i] = a * std::exp(r * i);
  e.front() = a;
  e.back() = b;
  return e;
}

std::vector<double> uniform_edges(double a, double b, int n) {
  std::vector<double> e(n + 1);
  for (int i = 0; i <= n; ++i) e[i] = a + (b - a) * i / n;
  return e;
}

std::vector<double> power_weighted_weights(const std::vector<double>& nodes,
                                           double p) {
  // integral s^(p-1) H(s) ds with H piecewise linear on [s_i, s_{i+1}] and
  // constant on [0, s_0]. Exact moments of s^(p-1) per panel.
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 0.0);
  if (n == 0) return w;
  auto m0 = [&](double a, double b) {
    return (std::pow(b, p) - std::pow(a, p)) / p;
  };
  auto m1 = [&](double a, double b) {
    return (std::pow(b, p + 1) - std::pow(a, p + 1)) / (p + 1);
  };
  // [0, s_0]: H == H(s_0).
  w[0] += m0(0.0, nodes[0]);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = nodes[i], b = nodes[i + 1];
    const double i0 = m0(a, b), i1 = m1(a, b);
    const double inv = 1.0 / (b - a);
    // H(s) = H_a (b-s)/(b-a) + H_b (s-a)/(b-a)
    w[i] += (b * i0 - i1) * inv;
    w[i + 1] += (i1 - a * i0) * inv;
  }
  return w;
}

double power_weighted_integral(const std::vector<double>& nodes,
                               const std::vector<double>& values, double p) {
  const auto w = power_weighted_weights(nodes, p);
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) acc += w[i] * values[i];
  return acc;
}

double simpson_uniform(const std::vector<double>& values, double h) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  double acc = 0.0;
  std::size_t limit = (n % 2 == 1) ? n - 1 : n - 2;
  for (std::size_t i = 0; i + 2 <= limit; i += 2) {
    acc += h / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
  }
  if (n % 2 == 0) acc += 0.5 * h * (values[n - 2] + values[n - 1]);
  return acc;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    acc += 0.5 * (x[i + 1] - x[i]) * (y[i] + y[i + 1]);
  }
  return acc;
}

}  // namespace stablesde
