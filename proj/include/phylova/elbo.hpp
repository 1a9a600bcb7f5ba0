#pragma once

// Variational lower bound for the phylogenetic mixed model
//
//   g(E[y_ij]) = x_i' (beta_x + B_tx' t_j + b_j),   vec(B') ~ N(0, Sigma_prior),
//
// with a matrix-normal variational density q(B) = MN(a, Ar, Am) and the
// reduced-rank species covariance Am = Ad Ad' + diag(D). Stacking is
// covariate-major (species fastest), so cov_q = Ar kron Am matches the
// prior's block layout.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "phylova/kernel.hpp"
#include "phylova/sparseprec.hpp"

namespace phylova {

enum class Family { bernoulli, poisson };
enum class Link { probit, logit, log };

const char* family_name(Family f);
const char* link_name(Link l);
Family parse_family(std::string_view name);
Link parse_link(std::string_view name);
Link default_link(Family f);

struct ModelData {
  Eigen::MatrixXd y;                                   // n x m
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed;  // n x m, or empty = all observed
  Eigen::MatrixXd x;                                   // n x p
  Eigen::MatrixXd traits;                              // m x t (t may be 0)
  Family family = Family::bernoulli;
  Link link = Link::probit;
  std::vector<std::string> species;
  std::vector<std::string> covariates;
  std::vector<std::string> trait_names;

  Eigen::Index num_sites() const { return y.rows(); }
  Eigen::Index num_species() const { return y.cols(); }
  Eigen::Index num_covariates() const { return x.cols(); }
  Eigen::Index num_traits() const { return traits.cols(); }
  bool is_observed(Eigen::Index i, Eigen::Index j) const { return observed.size() == 0 || observed(i, j); }

  void validate() const;
  /// Species columns (and trait rows) rearranged so column pos holds species order[pos].
  ModelData permuted(const Ordering& ordering) const;
};

struct FixedEffects {
  Eigen::VectorXd beta_x;  // p
  Eigen::MatrixXd b_tx;    // t x p
};

struct VariationalState {
  Eigen::MatrixXd a;     // p x m
  Eigen::MatrixXd ar;    // p x p SPD
  Eigen::MatrixXd ad;    // m x d, lower triangular, positive diagonal
  Eigen::VectorXd diag;  // m, first d entries zero

  Eigen::Index rank() const { return ad.cols(); }
  Eigen::VectorXd am_diagonal() const;
  Eigen::MatrixXd am() const;
  double logdet_am() const;
  void validate(bool ar_diagonal = false) const;
};

struct PredictorMoments {
  double mean;
  double variance;
};

PredictorMoments predictor_moments(const ModelData& data, const FixedEffects& fixed, const VariationalState& state,
                                   Eigen::Index i, Eigen::Index j);

/// E[log f(y | eta)] for eta ~ N(mean, variance), including constants.
/// Poisson/log is closed form; Bernoulli uses 20-node Gauss-Hermite.
double expected_loglik(Family family, Link link, double y, double mean, double variance);

/// KL(q || prior). State and prior share position order.
double kl_divergence(const VariationalState& state, const PriorFactor& prior);

/// Bound on the marginal log-likelihood. `data` columns must be in the
/// prior's position order.
double elbo(const ModelData& data, const FixedEffects& fixed, const VariationalState& state,
            const PriorFactor& prior);

// ---------------------------------------------------------------------------
// Unconstrained parameterisation

enum class ArStructure { unstructured, diagonal };

struct ModelSpec {
  int num_species = 0;
  int num_covariates = 0;
  int num_traits = 0;
  int rank = 1;  // d
  ArStructure ar = ArStructure::unstructured;
  bool shared_signal = false;
  bool sr_identity = false;  // covariate correlation fixed at I
};

/// Full model + variational parameters on their natural scales.
struct ParameterSet {
  FixedEffects fixed;
  SignalParams signal;
  Eigen::MatrixXd sr;
  VariationalState state;
};

/// Flat layout of the unconstrained vector: beta_x, B_tx, log sigma, logit rho,
/// Sr parameters, a, Ar factor (log diagonal), Ad (log diagonal), log D.
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  int size() const { return total_; }
  /// Number of leading model (non-variational) parameters.
  int num_model_params() const { return a_; }

  int beta_offset() const { return beta_; }
  int btx_offset() const { return btx_; }
  int log_sigma_offset() const { return sigma_; }
  int logit_rho_offset() const { return rho_; }
  int sr_offset() const { return sr_; }
  int a_offset() const { return a_; }
  int ar_offset() const { return ar_; }
  int ad_offset() const { return ad_; }
  int log_d_offset() const { return d_; }

  std::string name(int index) const;

  Eigen::VectorXd pack(const ParameterSet& params) const;
  ParameterSet unpack(const Eigen::VectorXd& theta) const;

 private:
  ModelSpec spec_;
  int beta_ = 0, btx_ = 0, sigma_ = 0, rho_ = 0, sr_ = 0, a_ = 0, ar_ = 0, ad_ = 0, d_ = 0, total_ = 0;
};

/// The bound as a function of the unconstrained vector. Species are held in
/// position order internally; `data` and `corr` are given in species order.
class VariationalObjective {
 public:
  VariationalObjective(const ModelData& data, const Eigen::MatrixXd& corr, const NeighborSets& sets,
                       const ModelSpec& spec);

  const ParameterLayout& layout() const { return layout_; }
  const ModelData& position_data() const { return data_; }
  const NeighborSets& position_sets() const { return sets_; }
  const Ordering& ordering() const { return ordering_; }

  double value(const Eigen::VectorXd& theta) const;
  /// Returns the bound and writes its exact gradient. Throws NumericalError
  /// naming the first non-finite coordinate.
  double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;

  /// Prior built at the model parameters encoded in theta.
  PriorFactor prior_at(const Eigen::VectorXd& theta) const;

 private:
  ModelData data_;        // position order
  Eigen::MatrixXd corr_;  // position order
  NeighborSets sets_;     // identity ordering over positions
  Ordering ordering_;     // original ordering (position -> species)
  ParameterLayout layout_;
  double log_factorial_sum_ = 0.0;
};

}  // namespace phylova
