#pragma once

#include <cstddef>
#include <vector>

namespace stablesde {

// Natural cubic spline on an arbitrary ascending grid. Evaluation outside the
// grid clamps to the boundary polynomial.
class CubicSpline {
public:
  CubicSpline() = default;
  CubicSpline(std::vector<double> x, std::vector<double> y);

  double operator()(double x) const;
  double deriv(double x) const;
  double deriv2(double x) const;
  bool empty() const { return x_.empty(); }
  double x_min() const { return x_.front(); }
  double x_max() const { return x_.back(); }

private:
  std::size_t locate(double x) const;
  std::vector<double> x_, y_, m_;  // m_: second derivatives at nodes
};

// Piecewise-linear interpolation with clamped extrapolation.
double lerp_grid(const std::vector<double>& x, const std::vector<double>& y,
                 double xq);

// Index of the last grid point <= xq (0 if below range).
std::size_t lower_index(const std::vector<double>& x, double xq);

}  // namespace stablesde
