#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "hermnet/autodiff.hpp"
#include "hermnet/error.hpp"

namespace hermnet {

inline constexpr std::size_t kDefaultRadialBasisSize = 30;

/// 0.5 * (cos(pi r / r_cut) + 1) inside the cutoff, 0 beyond it.
inline double cosine_cutoff(double r, double r_cut) {
  if (r < 0.0) throw DomainError("cosine_cutoff: negative distance");
  if (r >= r_cut) return 0.0;
  return 0.5 * (std::cos(std::numbers::pi * r / r_cut) + 1.0);
}

/// sin(n pi r / r_cut) / r for n = 1..count.
inline std::vector<double> radial_basis(
    double r, double r_cut, std::size_t count = kDefaultRadialBasisSize) {
  if (!(r > 0.0)) throw DomainError("radial_basis: distance must be positive");
  std::vector<double> out(count);
  for (std::size_t n = 1; n <= count; ++n) {
    out[n - 1] = std::sin(static_cast<double>(n) * std::numbers::pi * r / r_cut) / r;
  }
  return out;
}

namespace ad {

/// Tape version of cosine_cutoff for distances already within the cutoff.
/// `exponent` other than 1 raises the switch to that power.
inline Var cosine_cutoff(const Var& r, double r_cut, double exponent = 1.0) {
  Var f = scale(add_scalar(cos(scale(r, std::numbers::pi / r_cut)), 1.0), 0.5);
  if (exponent != 1.0) f = pow(f, exponent);
  return f;
}

/// Tape version of radial_basis: r[E] -> [E, count].
inline Var radial_basis(const Var& r, double r_cut, std::size_t count) {
  Tensor freq(Shape{count});
  for (std::size_t n = 1; n <= count; ++n) {
    freq[n - 1] = static_cast<double>(n) * std::numbers::pi / r_cut;
  }
  Var rr = bcast_last(r, count);
  Var arg = scale_last(rr, r.tape().constant(std::move(freq)));
  return div(sin(arg), rr);
}

}  // namespace ad

}  // namespace hermnet
