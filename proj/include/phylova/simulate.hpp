#pragma once

// Synthetic datasets from the phylogenetic mixed model and recovery summaries.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "phylova/elbo.hpp"
#include "phylova/fit.hpp"
#include "phylova/phylo.hpp"

namespace phylova {

struct SimProtocol {
  int n = 100;
  int m = 100;
  int p = 5;  // slope covariates, Uniform(-1, 1)
  Family family = Family::bernoulli;
  Link link = Link::probit;
  double rho = 0.5;
  double wishart_scale = 0.2;  // scale matrix = wishart_scale * I
  int wishart_df = 0;          // 0 means p
  bool intercept = false;      // prepend a column of ones (not drawn)
  Eigen::VectorXd beta_x;      // empty means zeros
  std::uint64_t seed = 1;

  void validate() const;
  int num_covariates() const { return p + (intercept ? 1 : 0); }
};

/// Bartlett construction: L A A' L' with L = chol(scale).
Eigen::MatrixXd wishart_sample(const Eigen::MatrixXd& scale, int df, std::mt19937_64& rng);
Eigen::MatrixXd wishart_sample(const Eigen::MatrixXd& scale, int df, std::uint64_t seed);

/// Draw of vec(B') ~ N(0, L (Sr kron I) L') with shared rho; returns p x m.
Eigen::MatrixXd draw_random_effects(const Eigen::MatrixXd& corr, const SignalParams& signal, const Eigen::MatrixXd& sr,
                                    std::mt19937_64& rng);

struct SimTruth {
  Eigen::MatrixXd wishart;  // covariance of the random effects
  Eigen::VectorXd sigma;
  double rho = 0.0;
  Eigen::MatrixXd sr;
  Eigen::VectorXd beta_x;
  Eigen::MatrixXd b_eps;  // p x m, species order
};

struct SimDataset {
  ModelData data;
  PhyloTree tree;
  PhyloCorrelation corr;
  SimTruth truth;
};

/// Independent random streams for a replicate, split by purpose.
std::mt19937_64 sim_stream(std::uint64_t seed, std::uint64_t replicate, std::uint64_t purpose);

SimDataset simulate_dataset(const SimProtocol& protocol, int replicate = 0);

// ---------------------------------------------------------------------------
// replicate studies

struct SimCondition {
  int m = 0;
  int nn = 0;
  int rank = 0;
  NeighborRule rule = NeighborRule::nngp;
  ArStructure ar = ArStructure::unstructured;
};

struct ReplicateResult {
  SimCondition condition;
  int replicate = 0;
  double rho_true = 0.0;
  double rho_hat = 0.0;
  double elbo = 0.0;
  int iterations = 0;
  bool converged = false;
  double time = 0.0;  // seconds
};

struct SimStudy {
  SimProtocol protocol;  // protocol.m is overridden by m_values
  FitConfig fit;         // nn/rank/rule/ar overridden per condition
  std::vector<int> m_values{100};
  std::vector<int> nn_values{10};
  std::vector<int> rank_values{1};
  std::vector<NeighborRule> rules{NeighborRule::nngp};
  std::vector<ArStructure> ar_values{ArStructure::unstructured};
  int replicates = 1;

  std::vector<SimCondition> conditions() const;
};

/// Runs every condition on every replicate. Datasets depend only on
/// (seed, m, replicate), so conditions with the same m share data. Results
/// are ordered by condition, then replicate.
std::vector<ReplicateResult> run_study(const SimStudy& study);

struct RecoverySummary {
  SimCondition condition;
  int replicates = 0;
  int converged = 0;
  double mae = 0.0;  // median |rho_hat - rho|
  double time_median = 0.0;
  double time_p025 = 0.0;
  double time_p975 = 0.0;
};

/// Linear-interpolation percentile (q in [0, 1]).
double percentile(std::vector<double> values, double q);
double median(std::vector<double> values);

/// Grouped by condition in first-seen order.
std::vector<RecoverySummary> recovery_metrics(const std::vector<ReplicateResult>& results);

}  // namespace phylova
