#pragma once

// Sparse approximate inverse Cholesky factors built from nearest-neighbour
// (or band) conditioning sets.
//
// Given an ordering pi of the m species, each position j is conditioned on a
// set A_j of earlier positions:
//
//   x_j | x_{A_j} ~ N(b_j' x_{A_j}, f_j),
//   b_j = K_{A_j A_j}^{-1} K_{A_j j},   f_j = K_jj - K_{j A_j} b_j.
//
// Collecting the rows gives U = F^{-1/2} (I - B), lower triangular in
// position space, with U'U the approximate precision of K permuted into
// pi-order. Vectors handed to apply_U / apply_Ut are in position space.

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "phylova/phylo.hpp"

namespace phylova {

inline constexpr int kMaxNeighbors = 64;

enum class NeighborRule { nngp, band };

const char* rule_name(NeighborRule rule);
NeighborRule parse_rule(std::string_view name);

struct NeighborSets {
  Ordering ordering;
  NeighborRule rule = NeighborRule::nngp;
  int nn = 0;
  std::vector<std::vector<int>> sets;  // sets[j]: positions < j, ascending

  std::size_t size() const { return sets.size(); }
  /// True when every position conditions on all of its predecessors.
  bool full_conditioning() const;
};

/// Neighbour sets from a species-by-species similarity (larger = closer);
/// ties go to the earlier position. `nn` must lie in [1, m-1] and may exceed
/// kMaxNeighbors only for full conditioning (nn = m-1).
NeighborSets neighbor_sets(const Eigen::MatrixXd& similarity, const Ordering& ordering, int nn,
                           NeighborRule rule);

/// nngp sets ranked by ascending distance instead of descending similarity.
NeighborSets neighbor_sets_by_distance(const Eigen::MatrixXd& distances, const Ordering& ordering,
                                       int nn);

/// Entry accessor K(i, l) on species indices.
using CovarianceAccessor = std::function<double(int, int)>;

class SparseInvChol {
 public:
  SparseInvChol() = default;
  SparseInvChol(Ordering ordering, std::vector<std::size_t> offsets, std::vector<int> neighbors,
                std::vector<double> weights, std::vector<double> cond_var);

  std::size_t size() const { return cond_var_.size(); }
  const Ordering& ordering() const { return ordering_; }

  std::span<const int> neighbors(std::size_t j) const {
    return {neighbors_.data() + offsets_[j], offsets_[j + 1] - offsets_[j]};
  }
  std::span<const double> weights(std::size_t j) const {
    return {weights_.data() + offsets_[j], offsets_[j + 1] - offsets_[j]};
  }
  double cond_var(std::size_t j) const { return cond_var_[j]; }

  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const std::vector<int>& neighbor_data() const { return neighbors_; }
  const std::vector<double>& weight_data() const { return weights_; }
  const std::vector<double>& cond_var_data() const { return cond_var_; }

  /// U v and U' v, O(m * nn).
  Eigen::VectorXd apply_U(std::span<const double> v) const;
  Eigen::VectorXd apply_Ut(std::span<const double> v) const;

  Eigen::MatrixXd dense_U() const;

 private:
  Ordering ordering_;
  std::vector<std::size_t> offsets_;
  std::vector<int> neighbors_;
  std::vector<double> weights_;
  std::vector<double> cond_var_;
};

/// Builds the factor row by row (rows are independent and run in parallel).
/// Throws ConditioningError when f_j <= 1e-12 * K_jj or a neighbour block is
/// not positive definite.
SparseInvChol build_factor(const CovarianceAccessor& kernel, const NeighborSets& sets);

/// sum_j log f_j = log det of the implied covariance (U'U)^{-1}.
double logdet_approx_cov(const SparseInvChol& factor);

/// || (U'U) (P C P') - I ||_F, evaluated in position space.
double approx_error(const Eigen::MatrixXd& corr, const SparseInvChol& factor);

/// Diagnostic export: one line per position with its neighbours, weights and
/// conditional variance.
void write_factor_csv(std::ostream& out, const SparseInvChol& factor);

}  // namespace phylova
