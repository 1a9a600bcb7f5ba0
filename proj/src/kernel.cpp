#include "phylova/kernel.hpp"

#include <cmath>
#include <memory>

#include "phylova/error.hpp"
#include "phylova/parallel.hpp"
#include "phylova/simd.hpp"

namespace phylova {

void SignalParams::validate() const {
  if (sigma.size() != rho.size()) throw DimensionError("sigma and rho lengths differ");
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    if (!(sigma(k) > 0.0)) throw InvalidArgument("sigma must be positive");
    if (!(rho(k) >= 0.0 && rho(k) <= 1.0)) throw InvalidArgument("rho must lie in [0, 1]");
  }
  if (shared_signal) {
    for (Eigen::Index k = 1; k < rho.size(); ++k) {
      if (rho(k) != rho(0)) throw InvalidArgument("shared signal requires equal rho");
    }
  }
}

// ---------------------------------------------------------------------------
// covariate correlation

int correlation_param_count(int p) { return p * (p - 1) / 2; }

namespace {
Eigen::MatrixXd unit_row_factor(const Eigen::VectorXd& theta, int p, Eigen::VectorXd* norms) {
  if (theta.size() != correlation_param_count(p)) throw DimensionError("correlation parameter count mismatch");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p, p);
  if (norms) norms->resize(p);
  int idx = 0;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < i; ++j) l(i, j) = theta(idx++);
    l(i, i) = 1.0;
    const double n = l.row(i).head(i + 1).norm();
    l.row(i).head(i + 1) /= n;
    if (norms) (*norms)(i) = n;
  }
  return l;
}
}  // namespace

Eigen::MatrixXd correlation_from_params(const Eigen::VectorXd& theta, int p) {
  const Eigen::MatrixXd l = unit_row_factor(theta, p, nullptr);
  Eigen::MatrixXd s = l * l.transpose();
  s.diagonal().setOnes();
  return s;
}

Eigen::VectorXd params_from_correlation(const Eigen::MatrixXd& corr) {
  const int p = static_cast<int>(corr.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) throw NumericalError("correlation matrix is not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  Eigen::VectorXd theta(correlation_param_count(p));
  int idx = 0;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < i; ++j) theta(idx++) = l(i, j) / l(i, i);
  return theta;
}

Eigen::VectorXd correlation_params_gradient(const Eigen::VectorXd& theta, int p, const Eigen::MatrixXd& d_corr) {
  Eigen::VectorXd norms;
  const Eigen::MatrixXd l = unit_row_factor(theta, p, &norms);
  const Eigen::MatrixXd dl = (d_corr + d_corr.transpose()) * l;
  Eigen::VectorXd out(correlation_param_count(p));
  int idx = 0;
  for (int i = 0; i < p; ++i) {
    const Eigen::VectorXd li = l.row(i).head(i + 1).transpose();
    const Eigen::VectorXd gi = dl.row(i).head(i + 1).transpose();
    const Eigen::VectorXd du = (gi - li * li.dot(gi)) / norms(i);
    for (int j = 0; j < i; ++j) out(idx++) = du(j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// kernels

Eigen::MatrixXd repulsion_correlation(const Eigen::MatrixXd& corr) {
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) throw NumericalError("repulsion requires a non-singular correlation matrix");
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(corr.rows(), corr.cols()));
  const Eigen::VectorXd scale = inv.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd out = scale.asDiagonal() * inv * scale.asDiagonal();
  out = 0.5 * (out + out.transpose());
  out.diagonal().setOnes();
  return out;
}

CovarianceAccessor pagel_kernel(const PhyloCorrelation& corr, double rho, double sigma, bool repulsion) {
  auto c = std::make_shared<const Eigen::MatrixXd>(repulsion ? repulsion_correlation(corr.matrix) : corr.matrix);
  const double s2 = sigma * sigma;
  return [c, rho, s2](int i, int l) { return s2 * (rho * (*c)(i, l) + (i == l ? 1.0 - rho : 0.0)); };
}

Eigen::MatrixXd pagel_covariance(const Eigen::MatrixXd& corr, double rho, double sigma) {
  Eigen::MatrixXd k = rho * corr;
  k.diagonal().array() += 1.0 - rho;
  return sigma * sigma * k;
}

PagelFactor build_pagel_factor(const Eigen::MatrixXd& corr, const NeighborSets& sets, double rho, double sigma,
                               bool with_derivatives) {
  const std::size_t m = sets.size();
  if (static_cast<std::size_t>(corr.rows()) != m) throw DimensionError("kernel size does not match neighbour sets");
  const auto& ord = sets.ordering.order;
  const double s2 = sigma * sigma;
  std::vector<std::size_t> offsets(m + 1, 0);
  for (std::size_t j = 0; j < m; ++j) offsets[j + 1] = offsets[j] + sets.sets[j].size();
  const std::size_t nnz = offsets.back();
  std::vector<int> neighbors(nnz);
  std::vector<double> weights(nnz);
  std::vector<double> cond_var(m);
  PagelFactor out;
  if (with_derivatives) {
    out.d_weights.assign(nnz, 0.0);
    out.d_cond_var.assign(m, 0.0);
  }

  parallel_for(m, [&](std::size_t j) {
    const auto& a = sets.sets[j];
    const std::size_t k = a.size();
    const int sj = ord[j];
    const double unit_var = rho * corr(sj, sj) + (1.0 - rho);
    std::copy(a.begin(), a.end(), neighbors.begin() + static_cast<std::ptrdiff_t>(offsets[j]));
    if (k == 0) {
      if (!(unit_var > 0.0)) throw ConditioningError("non-positive variance", j);
      cond_var[j] = s2 * unit_var;
      if (with_derivatives) out.d_cond_var[j] = s2 * (corr(sj, sj) - 1.0);
      return;
    }
    Eigen::MatrixXd caa(k, k);
    Eigen::VectorXd caj(k);
    for (std::size_t r = 0; r < k; ++r) {
      const int sr = ord[a[r]];
      caj(r) = corr(sr, sj);
      for (std::size_t c = 0; c <= r; ++c) {
        caa(r, c) = corr(sr, ord[a[c]]);
        caa(c, r) = caa(r, c);
      }
    }
    // unit-scale kernel blocks; sigma^2 only rescales f
    Eigen::MatrixXd kaa = rho * caa;
    kaa.diagonal().array() += 1.0 - rho;
    Eigen::LLT<Eigen::MatrixXd> llt(kaa);
    if (llt.info() != Eigen::Success) throw ConditioningError("neighbour covariance block is not positive definite", j);
    const Eigen::VectorXd b = llt.solve(rho * caj);
    const double f1 = unit_var - rho * caj.dot(b);
    if (!(f1 > 1e-12 * unit_var)) throw ConditioningError("conditional variance collapsed", j);
    std::copy(b.data(), b.data() + k, weights.begin() + static_cast<std::ptrdiff_t>(offsets[j]));
    cond_var[j] = s2 * f1;
    if (with_derivatives) {
      Eigen::MatrixXd dk = caa;
      dk.diagonal().array() -= 1.0;
      const Eigen::VectorXd dkb = dk * b;
      const Eigen::VectorXd db = llt.solve(caj - dkb);
      std::copy(db.data(), db.data() + k, out.d_weights.begin() + static_cast<std::ptrdiff_t>(offsets[j]));
      out.d_cond_var[j] = s2 * ((corr(sj, sj) - 1.0) - 2.0 * caj.dot(b) + b.dot(dkb));
    }
  });
  out.factor = SparseInvChol(sets.ordering, std::move(offsets), std::move(neighbors), std::move(weights),
                             std::move(cond_var));
  return out;
}

PriorFactor build_prior(const Eigen::MatrixXd& corr, const NeighborSets& sets, const SignalParams& signal,
                        const Eigen::MatrixXd& sr, bool with_derivatives) {
  signal.validate();
  const std::size_t p = signal.size();
  if (static_cast<std::size_t>(sr.rows()) != p || sr.rows() != sr.cols())
    throw DimensionError("covariate correlation has the wrong size");
  PriorFactor prior;
  prior.blocks.resize(p);
  for (std::size_t k = 0; k < p; ++k) {
    prior.blocks[k] = build_pagel_factor(corr, sets, signal.rho(k), signal.sigma(k), with_derivatives);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sr);
  if (llt.info() != Eigen::Success) throw NumericalError("covariate correlation is not positive definite");
  prior.sr = sr;
  prior.sr_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  prior.sr_logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return prior;
}

PriorFactor build_prior(const PhyloCorrelation& corr, const Ordering& ordering, int nn, NeighborRule rule,
                        const SignalParams& signal, const Eigen::MatrixXd& sr, bool repulsion) {
  const NeighborSets sets = neighbor_sets(corr.matrix, ordering, nn, rule);
  if (repulsion) return build_prior(repulsion_correlation(corr.matrix), sets, signal, sr);
  return build_prior(corr.matrix, sets, signal, sr);
}

double prior_logdet(const PriorFactor& prior) {
  double s = static_cast<double>(prior.num_species()) * prior.sr_logdet;
  for (const auto& block : prior.blocks) s += logdet_approx_cov(block.factor);
  return s;
}

Eigen::MatrixXd multiply_U(const SparseInvChol& factor, const Eigen::MatrixXd& x) {
  const std::size_t m = factor.size();
  if (static_cast<std::size_t>(x.rows()) != m) throw DimensionError("multiply_U: row count mismatch");
  Eigen::MatrixXd out(m, x.cols());
  for (std::size_t j = 0; j < m; ++j) {
    Eigen::RowVectorXd acc = x.row(j);
    const auto nb = factor.neighbors(j);
    const auto w = factor.weights(j);
    for (std::size_t r = 0; r < nb.size(); ++r) acc -= w[r] * x.row(nb[r]);
    out.row(j) = acc / std::sqrt(factor.cond_var(j));
  }
  return out;
}

Eigen::MatrixXd multiply_Ut(const SparseInvChol& factor, const Eigen::MatrixXd& x) {
  const std::size_t m = factor.size();
  if (static_cast<std::size_t>(x.rows()) != m) throw DimensionError("multiply_Ut: row count mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, x.cols());
  for (std::size_t j = 0; j < m; ++j) {
    const Eigen::RowVectorXd s = x.row(j) / std::sqrt(factor.cond_var(j));
    out.row(j) += s;
    const auto nb = factor.neighbors(j);
    const auto w = factor.weights(j);
    for (std::size_t r = 0; r < nb.size(); ++r) out.row(nb[r]) -= w[r] * s;
  }
  return out;
}

double pattern_weighted_inner(const SparseInvChol& uk, const SparseInvChol& ul, const Eigen::VectorXd& diag) {
  if (uk.offsets() != ul.offsets()) throw DimensionError("factors do not share a sparsity pattern");
  double total = 0.0;
  for (std::size_t j = 0; j < uk.size(); ++j) {
    const auto nb = uk.neighbors(j);
    const auto wk = uk.weights(j);
    const auto wl = ul.weights(j);
    double row = diag(j);
    for (std::size_t r = 0; r < nb.size(); ++r) row += wk[r] * wl[r] * diag(nb[r]);
    total += row / std::sqrt(uk.cond_var(j) * ul.cond_var(j));
  }
  return total;
}

double prior_quadform(const PriorFactor& prior, const Eigen::MatrixXd& a) {
  const std::size_t p = prior.num_covariates();
  const std::size_t m = prior.num_species();
  if (static_cast<std::size_t>(a.rows()) != p || static_cast<std::size_t>(a.cols()) != m)
    throw DimensionError("prior_quadform: mean matrix has the wrong shape");
  Eigen::MatrixXd z(m, p);
  for (std::size_t k = 0; k < p; ++k) {
    const Eigen::VectorXd row = a.row(k).transpose();
    z.col(k) = prior.U(k).apply_U(std::span<const double>(row.data(), m));
  }
  const Eigen::MatrixXd gram = z.transpose() * z;
  return (prior.sr_inv.array() * gram.array()).sum();
}

double prior_trace(const PriorFactor& prior, const Eigen::MatrixXd& ar, const Eigen::MatrixXd& ad,
                   const Eigen::VectorXd& diag) {
  const std::size_t p = prior.num_covariates();
  const std::size_t m = prior.num_species();
  if (static_cast<std::size_t>(ar.rows()) != p || ar.rows() != ar.cols() ||
      static_cast<std::size_t>(ad.rows()) != m || static_cast<std::size_t>(diag.size()) != m)
    throw DimensionError("prior_trace: variational covariance has the wrong shape");
  const auto& kern = simd::active_kernels();
  std::vector<Eigen::MatrixXd> w(p);
  for (std::size_t k = 0; k < p; ++k) w[k] = multiply_U(prior.U(k), ad);
  double total = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = 0; l < p; ++l) {
      const double coef = prior.sr_inv(k, l) * ar(l, k);
      if (coef == 0.0) continue;
      double tau = pattern_weighted_inner(prior.U(k), prior.U(l), diag);
      for (Eigen::Index s = 0; s < ad.cols(); ++s) tau += kern.dot(w[k].col(s).data(), w[l].col(s).data(), m);
      total += coef * tau;
    }
  }
  return total;
}

Eigen::MatrixXd species_associations(const Eigen::MatrixXd& corr, const Ordering& ordering,
                                     const SignalParams& signal, const Eigen::MatrixXd& sr,
                                     const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
  signal.validate();
  const std::size_t p = signal.size();
  const std::size_t m = ordering.size();
  if (static_cast<std::size_t>(x1.size()) != p || static_cast<std::size_t>(x2.size()) != p ||
      static_cast<std::size_t>(sr.rows()) != p || static_cast<std::size_t>(corr.rows()) != m)
    throw DimensionError("species_associations: inconsistent dimensions");
  const auto& ord = ordering.order;
  Eigen::MatrixXd permuted(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < m; ++l) permuted(i, l) = corr(ord[i], ord[l]);
  std::vector<Eigen::MatrixXd> chol(p);
  for (std::size_t k = 0; k < p; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(pagel_covariance(permuted, signal.rho(k), signal.sigma(k)));
    if (llt.info() != Eigen::Success) throw NumericalError("dense Cholesky factorization failed for covariate " + std::to_string(k));
    chol[k] = llt.matrixL();
  }
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = 0; l < p; ++l) {
      const double coef = x1(k) * x2(l) * sr(k, l);
      if (coef == 0.0) continue;
      acc.noalias() += coef * chol[k] * chol[l].transpose();
    }
  }
  Eigen::MatrixXd out(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < m; ++l) out(ord[i], ord[l]) = acc(i, l);
  return out;
}

}  // namespace phylova
