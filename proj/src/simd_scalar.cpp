#include <cmath>
#include <numbers>

#include "phylova/quadrature.hpp"
#include "phylova/simd.hpp"

namespace phylova::simd {

void log_ndtr_mills(double t, double& log_cdf, double& mills) {
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;
  if (t > -30.0) {
    const double cdf = 0.5 * std::erfc(-t / std::numbers::sqrt2);
    log_cdf = std::log(cdf);
    mills = std::exp(-0.5 * t * t - kLogSqrt2Pi - log_cdf);
    return;
  }
  // Lower tail: Phi(t) = phi(t) * R(x), x = -t, with R the Mills ratio
  // evaluated by its continued fraction.
  const double x = -t;
  double frac = x;
  for (int k = 60; k >= 1; --k) frac = x + k / frac;
  const double ratio = 1.0 / frac;
  log_cdf = -0.5 * t * t - kLogSqrt2Pi + std::log(ratio);
  mills = frac;
}

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void probit_scalar(const CellBatch& batch) {
  const auto& rule = normal_quadrature();
  for (std::size_t c = 0; c < batch.count; ++c) {
    const double sign = batch.y[c] > 0.5 ? 1.0 : -1.0;
    const double sd = std::sqrt(batch.var[c]);
    double ll = 0.0;
    double g1 = 0.0;
    double g2 = 0.0;
    double g3 = 0.0;
    for (std::size_t q = 0; q < kHermiteNodes; ++q) {
      const double t = sign * (batch.mu[c] + sd * rule.nodes[q]);
      double lc = 0.0;
      double r = 0.0;
      log_ndtr_mills(t, lc, r);
      ll += rule.weights[q] * lc;
      g1 += rule.weights[q] * r;
      g2 += rule.weights[q] * (-r * (t + r));
      g3 += rule.weights[q] * rule.nodes[q] * r;
    }
    batch.loglik[c] = ll;
    batch.d_mu[c] = sign * g1;
    batch.d_var[c] = sd > kQuadratureMinSd ? sign * g3 / (2.0 * sd) : 0.5 * g2;
  }
}

void logit_scalar(const CellBatch& batch) {
  const auto& rule = normal_quadrature();
  for (std::size_t c = 0; c < batch.count; ++c) {
    const double sign = batch.y[c] > 0.5 ? 1.0 : -1.0;
    const double sd = std::sqrt(batch.var[c]);
    double ll = 0.0;
    double g1 = 0.0;
    double g2 = 0.0;
    double g3 = 0.0;
    for (std::size_t q = 0; q < kHermiteNodes; ++q) {
      const double t = sign * (batch.mu[c] + sd * rule.nodes[q]);
      // log sigmoid(t) and sigmoid(-t) without overflow
      const double e = std::exp(-std::abs(t));
      const double lc = std::min(t, 0.0) - std::log1p(e);
      const double upper = t >= 0.0 ? e / (1.0 + e) : 1.0 / (1.0 + e);
      ll += rule.weights[q] * lc;
      g1 += rule.weights[q] * upper;
      g2 += rule.weights[q] * (-upper * (1.0 - upper));
      g3 += rule.weights[q] * rule.nodes[q] * upper;
    }
    batch.loglik[c] = ll;
    batch.d_mu[c] = sign * g1;
    batch.d_var[c] = sd > kQuadratureMinSd ? sign * g3 / (2.0 * sd) : 0.5 * g2;
  }
}

void poisson_scalar(const CellBatch& batch) {
  for (std::size_t c = 0; c < batch.count; ++c) {
    const double rate = std::exp(batch.mu[c] + 0.5 * batch.var[c]);
    batch.loglik[c] = batch.y[c] * batch.mu[c] - rate;
    batch.d_mu[c] = batch.y[c] - rate;
    batch.d_var[c] = -0.5 * rate;
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar, dot_scalar, axpy_scalar, probit_scalar, logit_scalar,
                                 poisson_scalar};
  return table;
}

}  // namespace phylova::simd
