#pragma once

// Per-covariate phylogenetic kernels and the prior-precision algebra of the
// stacked random effects vec(B') ~ N(0, L (Sr kron I) L'), where L is
// block-diagonal with the (approximate) Cholesky factors of the covariate
// kernels Sigma_k = sigma_k^2 (rho_k C + (1 - rho_k) I).
//
// Everything species-indexed in this header is in position space (the
// ordering carried by the neighbour sets) unless noted otherwise.

#include <Eigen/Dense>
#include <vector>

#include "phylova/phylo.hpp"
#include "phylova/sparseprec.hpp"

namespace phylova {

struct SignalParams {
  Eigen::VectorXd sigma;  // > 0
  Eigen::VectorXd rho;    // in [0, 1]
  bool shared_signal = false;

  std::size_t size() const { return static_cast<std::size_t>(sigma.size()); }
  void validate() const;
};

// --- covariate correlation -------------------------------------------------
//
// Sr = L L' with L lower triangular whose row i is (theta_i0, ..., theta_i,i-1, 1)
// scaled to unit length. Parameters are stored row by row.

int correlation_param_count(int p);
Eigen::MatrixXd correlation_from_params(const Eigen::VectorXd& theta, int p);
Eigen::VectorXd params_from_correlation(const Eigen::MatrixXd& corr);
/// Chain rule: d_corr holds df/dSr_kl for every entry (treated independently).
Eigen::VectorXd correlation_params_gradient(const Eigen::VectorXd& theta, int p, const Eigen::MatrixXd& d_corr);

// --- kernels ----------------------------------------------------------------

/// C^{-1} rescaled to unit diagonal (phylogenetic repulsion).
Eigen::MatrixXd repulsion_correlation(const Eigen::MatrixXd& corr);

/// Entry accessor for sigma^2 {rho C* + (1 - rho) I} on species indices, with
/// C* = C or its normalised inverse when `repulsion` is set.
CovarianceAccessor pagel_kernel(const PhyloCorrelation& corr, double rho, double sigma, bool repulsion);

Eigen::MatrixXd pagel_covariance(const Eigen::MatrixXd& corr, double rho, double sigma);

/// Sparse factor of a Pagel kernel together with the derivatives of every
/// neighbour weight and conditional variance with respect to rho.
struct PagelFactor {
  SparseInvChol factor;
  std::vector<double> d_weights;
  std::vector<double> d_cond_var;
};

PagelFactor build_pagel_factor(const Eigen::MatrixXd& corr, const NeighborSets& sets, double rho, double sigma,
                               bool with_derivatives);

struct PriorFactor {
  std::vector<PagelFactor> blocks;  // one per covariate
  Eigen::MatrixXd sr;
  Eigen::MatrixXd sr_inv;
  double sr_logdet = 0.0;

  std::size_t num_covariates() const { return blocks.size(); }
  std::size_t num_species() const { return blocks.empty() ? 0 : blocks.front().factor.size(); }
  const SparseInvChol& U(std::size_t k) const { return blocks[k].factor; }
};

PriorFactor build_prior(const Eigen::MatrixXd& corr, const NeighborSets& sets, const SignalParams& signal,
                        const Eigen::MatrixXd& sr, bool with_derivatives = false);

PriorFactor build_prior(const PhyloCorrelation& corr, const Ordering& ordering, int nn, NeighborRule rule,
                        const SignalParams& signal, const Eigen::MatrixXd& sr, bool repulsion = false);

/// m log det Sr + sum_k log det(approximate Sigma_k).
double prior_logdet(const PriorFactor& prior);

/// vec(a')' Sigma_prior^{-1} vec(a') for a (p x m, columns in position order).
double prior_quadform(const PriorFactor& prior, const Eigen::MatrixXd& a);

/// tr{Sigma_prior^{-1} (Ar kron Am)} with Am = Ad Ad' + diag(D).
double prior_trace(const PriorFactor& prior, const Eigen::MatrixXd& ar, const Eigen::MatrixXd& ad,
                   const Eigen::VectorXd& diag);

/// U X for a dense X with m rows.
Eigen::MatrixXd multiply_U(const SparseInvChol& factor, const Eigen::MatrixXd& x);
/// U' X.
Eigen::MatrixXd multiply_Ut(const SparseInvChol& factor, const Eigen::MatrixXd& x);
/// sum_i sum_c U_k(i,c) U_l(i,c) D_c over the shared sparsity pattern.
double pattern_weighted_inner(const SparseInvChol& uk, const SparseInvChol& ul, const Eigen::VectorXd& diag);

/// Species associations between sites with covariates x1 and x2, using exact
/// dense Cholesky factors taken in `ordering`; result in species-index order.
Eigen::MatrixXd species_associations(const Eigen::MatrixXd& corr, const Ordering& ordering,
                                     const SignalParams& signal, const Eigen::MatrixXd& sr,
                                     const Eigen::VectorXd& x1, const Eigen::VectorXd& x2);

}  // namespace phylova
