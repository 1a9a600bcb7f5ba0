#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "phylova/simd.hpp"

using namespace phylova;

namespace {

struct Cells {
  std::vector<double> y, mu, var, ll, g1, g2;
  explicit Cells(std::size_t n) : y(n), mu(n), var(n), ll(n), g1(n), g2(n) {}
  simd::CellBatch batch() { return {y.data(), mu.data(), var.data(), y.size(), ll.data(), g1.data(), g2.data()}; }
};

Cells random_cells(std::size_t n, bool counts, std::mt19937_64& rng) {
  Cells c(n);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::poisson_distribution<int> pois(3.0);
  for (std::size_t i = 0; i < n; ++i) {
    c.y[i] = counts ? pois(rng) : (nd(rng) > 0 ? 1.0 : 0.0);
    c.mu[i] = 2.0 * nd(rng);
    c.var[i] = i % 7 == 0 ? 0.0 : u(rng);
  }
  return c;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol * std::max(1.0, std::abs(a[i])));
}

}  // namespace

TEST_CASE("log_ndtr_mills matches erfc in the bulk and the asymptotic tail") {
  for (double t : {-5.0, -1.0, 0.0, 0.7, 3.0}) {
    double lc, r;
    simd::log_ndtr_mills(t, lc, r);
    const double cdf = 0.5 * std::erfc(-t / std::sqrt(2.0));
    CHECK(lc == doctest::Approx(std::log(cdf)).epsilon(1e-13));
    CHECK(r == doctest::Approx(std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI) / cdf).epsilon(1e-12));
  }
  double lc, r;
  simd::log_ndtr_mills(-40.0, lc, r);
  // log Phi(-40) from the Mills ratio series
  CHECK(lc == doctest::Approx(-804.6084420137538).epsilon(1e-12));
  CHECK(r == doctest::Approx(40.0 + 1.0 / 40.0).epsilon(1e-4));
}

TEST_CASE("AVX2 cell kernels agree with the scalar reference") {
  const simd::KernelTable* avx = simd::avx2_kernels();
  if (!avx) {
    MESSAGE("AVX2 not available; equivalence test skipped");
    return;
  }
  const auto& ref = simd::scalar_kernels();
  std::mt19937_64 rng(11);
  for (std::size_t n : {1u, 3u, 4u, 5u, 8u, 13u, 257u}) {
    for (int fam = 0; fam < 3; ++fam) {
      Cells a = random_cells(n, fam == 2, rng);
      Cells b = a;
      const auto ka = fam == 0 ? ref.probit : fam == 1 ? ref.logit : ref.poisson;
      const auto kb = fam == 0 ? avx->probit : fam == 1 ? avx->logit : avx->poisson;
      ka(a.batch());
      kb(b.batch());
      expect_close(a.ll, b.ll, 1e-12);
      expect_close(a.g1, b.g1, 1e-12);
      expect_close(a.g2, b.g2, 1e-11);
    }
  }
}

TEST_CASE("AVX2 probit stays finite deep in the tails") {
  const simd::KernelTable* avx = simd::avx2_kernels();
  if (!avx) return;
  Cells a(6), b(6);
  const double mus[] = {-45.0, -30.0, -12.0, 12.0, 30.0, 45.0};
  for (int i = 0; i < 6; ++i) {
    a.y[i] = 1.0;
    a.mu[i] = mus[i];
    a.var[i] = 0.3;
  }
  b = a;
  simd::scalar_kernels().probit(a.batch());
  avx->probit(b.batch());
  for (int i = 0; i < 6; ++i) {
    CHECK(std::isfinite(b.ll[i]));
    CHECK(b.ll[i] == doctest::Approx(a.ll[i]).epsilon(1e-12));
    CHECK(b.g1[i] == doctest::Approx(a.g1[i]).epsilon(1e-11));
  }
}

TEST_CASE("dot and axpy variants agree") {
  const auto& ref = simd::scalar_kernels();
  const auto& act = simd::active_kernels();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (std::size_t n : {0u, 1u, 7u, 64u, 1001u}) {
    std::vector<double> x(n), y(n), y2;
    for (auto& v : x) v = nd(rng);
    for (auto& v : y) v = nd(rng);
    CHECK(act.dot(x.data(), y.data(), n) == doctest::Approx(ref.dot(x.data(), y.data(), n)).epsilon(1e-12));
    y2 = y;
    ref.axpy(0.7, x.data(), y.data(), n);
    act.axpy(0.7, x.data(), y2.data(), n);
    expect_close(y, y2, 1e-15);
  }
}

TEST_CASE("Poisson cells follow the closed form") {
  Cells c(1);
  c.y[0] = 3.0;
  c.mu[0] = 0.4;
  c.var[0] = 0.6;
  simd::active_kernels().poisson(c.batch());
  const double rate = std::exp(0.4 + 0.3);
  CHECK(c.ll[0] == doctest::Approx(3.0 * 0.4 - rate));
  CHECK(c.g1[0] == doctest::Approx(3.0 - rate));
  CHECK(c.g2[0] == doctest::Approx(-0.5 * rate));
}
