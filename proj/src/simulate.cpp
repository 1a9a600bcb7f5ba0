#include "phylova/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "phylova/error.hpp"
#include "phylova/kernel.hpp"
#include "phylova/parallel.hpp"

namespace phylova {

namespace {
enum Purpose : std::uint64_t { kTree = 1, kCovariates = 2, kCovariance = 3, kEffects = 4, kResponse = 5 };
}

void SimProtocol::validate() const {
  if (n < 1 || m < 1 || p < 1) throw InvalidArgument("n, m and p must be at least 1");
  if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("rho must lie in [0, 1]");
  if (!(wishart_scale > 0.0)) throw InvalidArgument("Wishart scale must be positive");
  if (wishart_df != 0 && wishart_df < p) throw InvalidArgument("Wishart degrees of freedom must be at least p");
  if (beta_x.size() != 0 && beta_x.size() != num_covariates())
    throw DimensionError("beta_x must have one entry per covariate");
  if ((family == Family::poisson) != (link == Link::log)) throw InvalidArgument("family and link do not match");
}

std::mt19937_64 sim_stream(std::uint64_t seed, std::uint64_t replicate, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

Eigen::MatrixXd wishart_sample(const Eigen::MatrixXd& scale, int df, std::mt19937_64& rng) {
  const Eigen::Index p = scale.rows();
  if (scale.cols() != p) throw DimensionError("Wishart scale must be square");
  if (df < p) throw InvalidArgument("Wishart degrees of freedom must be at least p");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw InvalidArgument("Wishart scale is not positive definite");
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    std::chi_squared_distribution<double> chi2(static_cast<double>(df - i));
    a(i, i) = std::sqrt(chi2(rng));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal(rng);
  }
  const Eigen::MatrixXd la = llt.matrixL() * a;
  return la * la.transpose();
}

Eigen::MatrixXd wishart_sample(const Eigen::MatrixXd& scale, int df, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return wishart_sample(scale, df, rng);
}

Eigen::MatrixXd draw_random_effects(const Eigen::MatrixXd& corr, const SignalParams& signal, const Eigen::MatrixXd& sr,
                                    std::mt19937_64& rng) {
  const Eigen::Index m = corr.rows();
  const Eigen::Index p = sr.rows();
  std::normal_distribution<double> normal;
  Eigen::MatrixXd z(m, p);
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index j = 0; j < m; ++j) z(j, k) = normal(rng);
  Eigen::LLT<Eigen::MatrixXd> sr_llt(sr);
  if (sr_llt.info() != Eigen::Success) throw InvalidArgument("Sr is not positive definite");
  // rows of e are independent N(0, Sr)
  const Eigen::MatrixXd e = z * sr_llt.matrixL().transpose();
  Eigen::MatrixXd b(p, m);
  for (Eigen::Index k = 0; k < p; ++k) {
    const Eigen::MatrixXd cov = pagel_covariance(corr, signal.rho(k), signal.sigma(k));
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance of the random effects is singular");
    b.row(k) = (llt.matrixL() * e.col(k)).transpose();
  }
  return b;
}

SimDataset simulate_dataset(const SimProtocol& protocol, int replicate) {
  protocol.validate();
  const int n = protocol.n, m = protocol.m;
  const int pc = protocol.num_covariates();
  const auto rep = static_cast<std::uint64_t>(replicate);
  SimDataset out;

  auto tree_rng = sim_stream(protocol.seed, rep, kTree);
  out.tree = simulate_tree(m, tree_rng());
  out.corr = correlation_matrix(out.tree);

  auto x_rng = sim_stream(protocol.seed, rep, kCovariates);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::MatrixXd x(n, pc);
  const int first = protocol.intercept ? 1 : 0;
  if (protocol.intercept) x.col(0).setOnes();
  for (int k = first; k < pc; ++k)
    for (int i = 0; i < n; ++i) x(i, k) = unif(x_rng);

  auto w_rng = sim_stream(protocol.seed, rep, kCovariance);
  const int df = protocol.wishart_df == 0 ? pc : protocol.wishart_df;
  const Eigen::MatrixXd w = wishart_sample(protocol.wishart_scale * Eigen::MatrixXd::Identity(pc, pc), std::max(df, pc), w_rng);
  SimTruth& truth = out.truth;
  truth.wishart = w;
  truth.sigma = w.diagonal().cwiseSqrt();
  truth.sr = truth.sigma.cwiseInverse().asDiagonal() * w * truth.sigma.cwiseInverse().asDiagonal();
  truth.sr.diagonal().setOnes();
  truth.rho = protocol.rho;
  truth.beta_x = protocol.beta_x.size() ? protocol.beta_x : Eigen::VectorXd::Zero(pc);

  SignalParams signal;
  signal.sigma = truth.sigma;
  signal.rho = Eigen::VectorXd::Constant(pc, protocol.rho);
  signal.shared_signal = true;
  auto b_rng = sim_stream(protocol.seed, rep, kEffects);
  truth.b_eps = draw_random_effects(out.corr.matrix, signal, truth.sr, b_rng);

  Eigen::MatrixXd coef = truth.b_eps;
  coef.colwise() += truth.beta_x;
  const Eigen::MatrixXd eta = x * coef;
  auto y_rng = sim_stream(protocol.seed, rep, kResponse);
  Eigen::MatrixXd y(n, m);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n; ++i) {
      const double e = eta(i, j);
      if (protocol.family == Family::poisson) {
        std::poisson_distribution<long> pois(std::exp(e));
        y(i, j) = static_cast<double>(pois(y_rng));
      } else if (protocol.link == Link::logit) {
        y(i, j) = unit(y_rng) < 1.0 / (1.0 + std::exp(-e)) ? 1.0 : 0.0;
      } else {
        y(i, j) = e + normal(y_rng) > 0.0 ? 1.0 : 0.0;
      }
    }
  }

  ModelData& data = out.data;
  data.y = y;
  data.x = x;
  data.traits.resize(m, 0);
  data.family = protocol.family;
  data.link = protocol.link;
  data.species = out.corr.labels;
  for (int k = 0; k < pc; ++k) data.covariates.push_back(protocol.intercept && k == 0 ? "intercept" : "x" + std::to_string(k + 1 - first));
  return out;
}

std::vector<SimCondition> SimStudy::conditions() const {
  std::vector<SimCondition> out;
  for (int m : m_values)
    for (auto rule : rules)
      for (int nn : nn_values)
        for (int d : rank_values)
          for (auto ar : ar_values) out.push_back({m, nn, d, rule, ar});
  return out;
}

std::vector<ReplicateResult> run_study(const SimStudy& study) {
  if (study.replicates < 1) throw InvalidArgument("at least one replicate is required");
  const auto conds = study.conditions();
  if (conds.empty()) throw InvalidArgument("empty simulation grid");
  const auto reps = static_cast<std::size_t>(study.replicates);

  std::vector<int> ms = study.m_values;
  std::map<int, std::size_t> m_index;
  for (std::size_t i = 0; i < ms.size(); ++i) m_index.emplace(ms[i], i);
  std::vector<SimDataset> datasets(ms.size() * reps);
  parallel_for(datasets.size(), [&](std::size_t t) {
    SimProtocol proto = study.protocol;
    proto.m = ms[t / reps];
    datasets[t] = simulate_dataset(proto, static_cast<int>(t % reps));
  });

  std::vector<ReplicateResult> results(conds.size() * reps);
  parallel_for(results.size(), [&](std::size_t t) {
    const SimCondition& c = conds[t / reps];
    const std::size_t r = t % reps;
    const SimDataset& ds = datasets[m_index.at(c.m) * reps + r];
    FitConfig cfg = study.fit;
    cfg.nn = c.nn;
    cfg.rank = c.rank;
    cfg.rule = c.rule;
    cfg.ar = c.ar;
    ReplicateResult& out = results[t];
    out.condition = c;
    out.replicate = static_cast<int>(r);
    out.rho_true = ds.truth.rho;
    const FitResult fit = fit_model(ds.data, ds.corr, ds.tree, cfg);
    out.rho_hat = fit.reported_rho()(0);
    out.elbo = fit.elbo;
    out.iterations = fit.iterations;
    out.converged = fit.converged;
    out.time = fit.wall_time;
  });
  return results;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(values.size() - 1, lo + 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return percentile(std::move(values), 0.5); }

std::vector<RecoverySummary> recovery_metrics(const std::vector<ReplicateResult>& results) {
  if (results.empty()) throw InvalidArgument("no replicate results");
  auto same = [](const SimCondition& a, const SimCondition& b) {
    return a.m == b.m && a.nn == b.nn && a.rank == b.rank && a.rule == b.rule && a.ar == b.ar;
  };
  std::vector<RecoverySummary> out;
  std::vector<std::vector<double>> errors, times;
  for (const auto& r : results) {
    std::size_t g = 0;
    while (g < out.size() && !same(out[g].condition, r.condition)) ++g;
    if (g == out.size()) {
      out.push_back({r.condition});
      errors.emplace_back();
      times.emplace_back();
    }
    out[g].replicates += 1;
    out[g].converged += r.converged ? 1 : 0;
    errors[g].push_back(std::abs(r.rho_hat - r.rho_true));
    times[g].push_back(r.time);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    out[g].mae = median(errors[g]);
    out[g].time_median = median(times[g]);
    out[g].time_p025 = percentile(times[g], 0.025);
    out[g].time_p975 = percentile(times[g], 0.975);
  }
  return out;
}

}  // namespace phylova
