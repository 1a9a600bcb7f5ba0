#pragma once

#include <array>
#include <cstddef>

namespace phylova {

inline constexpr std::size_t kHermiteNodes = 20;

/// Gauss-Hermite rule rescaled for a standard normal weight:
///   E[h(Z)] ~= sum_i weights[i] * h(nodes[i]),  Z ~ N(0, 1).
/// Exact for polynomials of degree < 40.
struct NormalQuadrature {
  std::array<double, kHermiteNodes> nodes;
  std::array<double, kHermiteNodes> weights;
};

const NormalQuadrature& normal_quadrature();

}  // namespace phylova
