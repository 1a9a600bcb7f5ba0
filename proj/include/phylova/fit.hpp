#pragma once

// Model fitting: initialisation, joint optimisation of model and variational
// parameters, standard errors and per-species effect tables.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "phylova/elbo.hpp"
#include "phylova/optim.hpp"
#include "phylova/phylo.hpp"
#include "phylova/sparseprec.hpp"

namespace phylova {

struct FitConfig {
  int nn = 10;
  NeighborRule rule = NeighborRule::nngp;
  OrderingMethod ordering = OrderingMethod::phylogeny_tips;
  int rank = 1;
  ArStructure ar = ArStructure::unstructured;
  bool shared_signal = false;
  bool sr_identity = false;
  bool repulsion = false;
  int max_iterations = 2000;
  double grad_tol = 1e-5;
  double rel_tol = 1e-9;
  int memory = 10;
  bool standard_errors = false;
  std::uint64_t seed = 1;

  void validate(int num_species) const;
  LbfgsOptions optimizer_options() const;
};

struct StandardErrors {
  bool available = false;
  std::string message;
  Eigen::VectorXd beta_x;  // p
  Eigen::MatrixXd b_tx;    // t x p
  Eigen::VectorXd sigma;   // delta method, natural scale
  Eigen::VectorXd rho;     // delta method, natural scale
  Eigen::VectorXd sr_params;
};

struct FitResult {
  bool converged = false;
  std::string message;
  std::vector<std::string> warnings;
  int iterations = 0;
  int evaluations = 0;
  double initial_elbo = 0.0;
  double elbo = 0.0;
  double wall_time = 0.0;  // seconds
  std::vector<double> trace;

  ModelSpec spec;
  Ordering ordering;   // position -> species
  int nn = 0;
  NeighborRule rule = NeighborRule::nngp;
  Eigen::VectorXd theta;
  ParameterSet estimates;  // variational state in position order
  std::optional<StandardErrors> standard_errors;

  /// Variational means as p x m in species order.
  Eigen::MatrixXd species_means() const;
  /// Am_jj in species order.
  Eigen::VectorXd species_variances() const;
  /// rho clipped to [1e-6, 1 - 1e-6] for reporting.
  Eigen::VectorXd reported_rho() const;
};

/// Starting point: pooled GLM for beta_x (ridge 1e-4), everything else at fixed defaults.
ParameterSet initialize(const ModelData& data, const ModelSpec& spec, std::vector<std::string>* warnings = nullptr);

/// Fits with explicit neighbour sets. `data` columns and `corr` rows are in species order.
FitResult fit_model(const ModelData& data, const Eigen::MatrixXd& corr, const NeighborSets& sets, const FitConfig& config);

/// Builds the ordering and neighbour sets from the tree, then fits.
FitResult fit_model(const ModelData& data, const PhyloCorrelation& corr, const PhyloTree& tree, const FitConfig& config);

/// Profiled finite-difference Hessian standard errors of the model parameters.
StandardErrors standard_errors(const VariationalObjective& objective, const Eigen::VectorXd& theta);

struct EffectRow {
  std::string species;
  std::string covariate;
  double community_mean;  // x-part: beta_x + B_tx' t_j
  double deviation;       // variational mean a_kj
  double effect;          // community_mean + deviation
  double sd;              // sqrt(Ar_kk Am_jj)
  double effect_lower;    // effect +- 1.96 sd
  double effect_upper;
  double lower;           // deviation +- 1.96 sd
  double upper;
  bool covers_zero;       // deviation interval contains 0
};

/// One row per species and covariate, species in data order.
std::vector<EffectRow> predict_effects(const FitResult& fit, const ModelData& data);

}  // namespace phylova
