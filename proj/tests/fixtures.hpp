#pragma once

// Random model instances shared by the ELBO, fit and acceptance tests.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "oracles.hpp"
#include "phylova/elbo.hpp"
#include "phylova/phylo.hpp"

namespace fixture {

using namespace phylova;

inline ModelData random_data(int n, int m, int p, int t, Family family, Link link, std::mt19937_64& rng,
                             double missing = 0.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::poisson_distribution<int> pois(1.5);
  ModelData d;
  d.family = family;
  d.link = link;
  d.x.resize(n, p);
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = 1.0;
    for (int k = 1; k < p; ++k) d.x(i, k) = u(rng);
  }
  d.y.resize(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) d.y(i, j) = family == Family::poisson ? pois(rng) : (u01(rng) < 0.4 ? 1.0 : 0.0);
  d.traits.resize(m, t);
  for (int j = 0; j < m; ++j)
    for (int s = 0; s < t; ++s) d.traits(j, s) = u(rng);
  if (missing > 0.0) {
    d.observed.resize(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) d.observed(i, j) = u01(rng) >= missing;
  }
  for (int j = 0; j < m; ++j) d.species.push_back("s" + std::to_string(j));
  for (int k = 0; k < p; ++k) d.covariates.push_back(k == 0 ? "intercept" : "x" + std::to_string(k));
  for (int s = 0; s < t; ++s) d.trait_names.push_back("t" + std::to_string(s));
  return d;
}

inline VariationalState random_state(int m, int p, int d, bool ar_diagonal, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5), pos(0.05, 0.4);
  VariationalState s;
  s.a.resize(p, m);
  for (int k = 0; k < p; ++k)
    for (int j = 0; j < m; ++j) s.a(k, j) = u(rng);
  s.ar = oracle::random_spd(p, rng, 0.3) * 0.3;
  if (ar_diagonal) s.ar = Eigen::MatrixXd(s.ar.diagonal().asDiagonal());
  s.ad = Eigen::MatrixXd::Zero(m, d);
  for (int c = 0; c < d; ++c) {
    s.ad(c, c) = pos(rng);
    for (int r = c + 1; r < m; ++r) s.ad(r, c) = u(rng) * 0.4;
  }
  s.diag = Eigen::VectorXd::Zero(m);
  for (int j = d; j < m; ++j) s.diag(j) = pos(rng);
  return s;
}

inline SignalParams random_signal(int p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> s(0.4, 1.5), r(0.05, 0.95);
  SignalParams sig;
  sig.sigma.resize(p);
  sig.rho.resize(p);
  for (int k = 0; k < p; ++k) {
    sig.sigma(k) = s(rng);
    sig.rho(k) = r(rng);
  }
  return sig;
}

inline Eigen::VectorXd random_theta(const ParameterLayout& layout, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> z(0.0, scale);
  Eigen::VectorXd theta(layout.size());
  for (int i = 0; i < layout.size(); ++i) theta(i) = z(rng);
  // keep the log-scale blocks away from extreme variances
  for (int i = layout.ar_offset(); i < layout.size(); ++i) theta(i) = 0.3 * theta(i) - 0.5;
  return theta;
}

inline double log_density(Family family, Link link, double y, double eta) {
  if (family == Family::poisson) return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
  const double s = y > 0.5 ? 1.0 : -1.0;
  if (link == Link::probit) return std::log(0.5 * std::erfc(-s * eta / std::sqrt(2.0)));
  // logit: log sigmoid(s * eta)
  const double v = s * eta;
  return v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
}

struct MonteCarloEstimate {
  double log_marginal;
  double standard_error;  // of the log estimate, delta method
};

/// log p(y) by sampling B from the dense prior; `corr` in species order and
/// fixed effects held at the supplied values.
inline MonteCarloEstimate mc_log_marginal(const ModelData& data, const FixedEffects& fixed, const Eigen::MatrixXd& corr,
                                          const SignalParams& signal, const Eigen::MatrixXd& sr, long samples,
                                          std::uint64_t seed) {
  const Eigen::Index n = data.num_sites(), m = data.num_species(), p = data.num_covariates();
  const Eigen::MatrixXd cov = oracle::prior_covariance(corr, signal.rho, signal.sigma, sr);
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
  Eigen::MatrixXd coef(p, m);  // x-part of the effects
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::VectorXd c = fixed.beta_x;
    if (data.num_traits() > 0) c += fixed.b_tx.transpose() * data.traits.row(j).transpose();
    coef.col(j) = c;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd e(p * m), b(p * m);
  std::vector<double> logw(static_cast<std::size_t>(samples));
  for (long s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < p * m; ++i) e(i) = z(rng);
    b.noalias() = l * e;
    double lw = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!data.is_observed(i, j)) continue;
        double eta = 0.0;
        for (Eigen::Index k = 0; k < p; ++k) eta += data.x(i, k) * (coef(k, j) + b(k * m + j));
        lw += log_density(data.family, data.link, data.y(i, j), eta);
      }
    }
    logw[static_cast<std::size_t>(s)] = lw;
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double sum = 0.0, sum2 = 0.0;
  for (double lw : logw) {
    const double w = std::exp(lw - mx);
    sum += w;
    sum2 += w * w;
  }
  const double nd = static_cast<double>(samples);
  const double mean = sum / nd;
  const double var = std::max(0.0, sum2 / nd - mean * mean);
  return {mx + std::log(mean), std::sqrt(var / nd) / mean};
}

/// Largest violation of |g - fd| <= max(rel * |fd|, abs) over all coordinates,
/// reported as the worst ratio (pass when < 1).
inline double gradient_violation(const VariationalObjective& obj, const Eigen::VectorXd& theta, double rel = 1e-4,
                                 double abs = 1e-6, std::string* worst = nullptr) {
  Eigen::VectorXd g;
  obj.value_and_gradient(theta, g);
  double out = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta(i)));
    Eigen::VectorXd up = theta, dn = theta;
    up(i) += h;
    dn(i) -= h;
    const double fd = (obj.value(up) - obj.value(dn)) / (2.0 * h);
    const double ratio = std::abs(g(i) - fd) / std::max(rel * std::abs(fd), abs);
    if (ratio > out) {
      out = ratio;
      if (worst) *worst = obj.layout().name(static_cast<int>(i)) + " grad " + std::to_string(g(i)) + " fd " + std::to_string(fd);
    }
  }
  return out;
}

}  // namespace fixture
