#pragma once

#include <cmath>

namespace stablesde {

// integral over R of (1 - cos u) |u|^(-1-alpha) du. This converts a jump
// kernel density c |z|^(-1-alpha) into the symbol c * A(alpha) * |xi|^alpha.
inline double symbol_mass(double alpha) {
  return M_PI / (std::tgamma(1.0 + alpha) * std::sin(M_PI * alpha / 2.0));
}

// Normalization of the second-difference form of the fractional derivative
// of order gamma in dimension 1:
//   D^gamma f(x) = (c / 2) integral [f(x+w) + f(x-w) - 2 f(x)] |w|^(-1-gamma) dw
// has Fourier symbol -|xi|^gamma. c equals 1 / symbol_mass(gamma) since the
// second-difference has transform -2(1 - cos(xi w)) f_hat.
inline double frac_diff_constant(double gamma) {
  return 1.0 / symbol_mass(gamma);
}

// Far-field coefficient of the kernel with symbol exp(-t |xi|^alpha) in d=1:
// p(t, x) -> t * stable_tail_constant(alpha) * |x|^(-1-alpha).
inline double stable_tail_constant(double alpha) {
  return 1.0 / symbol_mass(alpha);
}

}  // namespace stablesde
