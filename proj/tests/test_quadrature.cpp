#include <cmath>

#include "doctest.h"
#include "phylova/quadrature.hpp"

using phylova::normal_quadrature;

TEST_CASE("normal quadrature integrates even moments exactly up to degree 38") {
  const auto& q = normal_quadrature();
  double double_factorial = 1.0;  // (2k-1)!!
  for (int k = 0; k <= 19; ++k) {
    if (k > 0) double_factorial *= 2.0 * k - 1.0;
    double s = 0.0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i) s += q.weights[i] * std::pow(q.nodes[i], 2 * k);
    CHECK(s == doctest::Approx(double_factorial).epsilon(1e-9));
  }
}

TEST_CASE("normal quadrature nodes are symmetric and odd moments vanish") {
  const auto& q = normal_quadrature();
  const std::size_t n = q.nodes.size();
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(q.nodes[i] == doctest::Approx(-q.nodes[n - 1 - i]).epsilon(1e-13));
    CHECK(q.weights[i] == doctest::Approx(q.weights[n - 1 - i]).epsilon(1e-13));
    CHECK(q.weights[i] > 0.0);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += q.weights[i] * std::pow(q.nodes[i], 3);
  CHECK(std::abs(s) < 1e-12);
}

TEST_CASE("lognormal mean is reproduced") {
  const auto& q = normal_quadrature();
  double s = 0.0;
  for (std::size_t i = 0; i < q.nodes.size(); ++i) s += q.weights[i] * std::exp(0.8 * q.nodes[i]);
  CHECK(s == doctest::Approx(std::exp(0.32)).epsilon(1e-12));
}
