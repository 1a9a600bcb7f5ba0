#include "phylova/quadrature.hpp"

#include <cmath>
#include <numbers>

namespace phylova {
namespace {

// Newton iteration on the physicists' Hermite polynomial H_n with the usual
// asymptotic starting guesses; roots come out in descending order.
NormalQuadrature compute_rule() {
  constexpr int n = static_cast<int>(kHermiteNodes);
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  std::array<double, kHermiteNodes> x{};
  std::array<double, kHermiteNodes> w{};
  double z = 0.0;
  double pp = 0.0;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
  NormalQuadrature rule{};
  const double scale = 1.0 / std::sqrt(std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = std::numbers::sqrt2 * x[n - 1 - i];
    rule.weights[i] = w[n - 1 - i] * scale;
  }
  return rule;
}

}  // namespace

const NormalQuadrature& normal_quadrature() {
  static const NormalQuadrature rule = compute_rule();
  return rule;
}

}  // namespace phylova
