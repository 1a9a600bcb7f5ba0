#include "phylova/fit.hpp"

#include <chrono>
#include <cmath>

#include "phylova/error.hpp"
#include "phylova/kernel.hpp"

namespace phylova {

void FitConfig::validate(int num_species) const {
  if (num_species > 1 && (nn < 1 || nn > num_species - 1))
    throw InvalidArgument("nn must lie in [1, m-1], got " + std::to_string(nn));
  if (rank < 0 || rank > num_species) throw InvalidArgument("rank must lie in [0, m]");
  if (!(grad_tol > 0.0) || !(rel_tol > 0.0)) throw InvalidArgument("tolerances must be positive");
  if (memory < 1 || max_iterations < 0) throw InvalidArgument("invalid optimizer settings");
}

LbfgsOptions FitConfig::optimizer_options() const {
  LbfgsOptions o;
  o.max_iterations = max_iterations;
  o.memory = memory;
  o.grad_tol = grad_tol;
  o.rel_tol = rel_tol;
  return o;
}

Eigen::MatrixXd FitResult::species_means() const {
  const auto& a = estimates.state.a;
  Eigen::MatrixXd out(a.rows(), a.cols());
  for (Eigen::Index pos = 0; pos < a.cols(); ++pos) out.col(ordering.order[pos]) = a.col(pos);
  return out;
}

Eigen::VectorXd FitResult::species_variances() const {
  const Eigen::VectorXd amd = estimates.state.am_diagonal();
  Eigen::VectorXd out(amd.size());
  for (Eigen::Index pos = 0; pos < amd.size(); ++pos) out(ordering.order[pos]) = amd(pos);
  return out;
}

Eigen::VectorXd FitResult::reported_rho() const {
  return estimates.signal.rho.cwiseMax(1e-6).cwiseMin(1.0 - 1e-6);
}

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

// Pooled GLM with one coefficient vector shared by all species. The linear
// predictor only depends on the site, so cells are aggregated per site.
Eigen::VectorXd pooled_glm(const ModelData& data) {
  const Eigen::Index n = data.num_sites();
  const Eigen::Index p = data.num_covariates();
  Eigen::VectorXd count = Eigen::VectorXd::Zero(n), mean = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < data.num_species(); ++j) {
      if (!data.is_observed(i, j)) continue;
      count(i) += 1.0;
      mean(i) += data.y(i, j);
    }
    if (count(i) > 0.0) mean(i) /= count(i);
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd eta = data.x * beta;
    Eigen::VectorXd w(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double mu, dmu, var;
      if (data.family == Family::poisson) {
        mu = std::exp(std::min(eta(i), 30.0));
        dmu = mu;
        var = mu;
      } else if (data.link == Link::logit) {
        mu = std::clamp(1.0 / (1.0 + std::exp(-eta(i))), 1e-10, 1.0 - 1e-10);
        dmu = mu * (1.0 - mu);
        var = dmu;
      } else {
        mu = std::clamp(0.5 * std::erfc(-eta(i) / std::sqrt(2.0)), 1e-10, 1.0 - 1e-10);
        dmu = std::max(kInvSqrt2Pi * std::exp(-0.5 * eta(i) * eta(i)), 1e-300);
        var = mu * (1.0 - mu);
      }
      w(i) = count(i) * dmu * dmu / var;
      z(i) = eta(i) + (mean(i) - mu) / dmu;
    }
    Eigen::MatrixXd xtwx = data.x.transpose() * w.asDiagonal() * data.x;
    xtwx.diagonal().array() += 1e-4;
    const Eigen::VectorXd next = xtwx.ldlt().solve(data.x.transpose() * w.cwiseProduct(z));
    if (!next.allFinite()) throw NumericalError("pooled GLM diverged");
    const double change = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    if (change < 1e-10) break;
  }
  return beta;
}

}  // namespace

ParameterSet initialize(const ModelData& data, const ModelSpec& spec, std::vector<std::string>* warnings) {
  const int p = spec.num_covariates;
  const int m = spec.num_species;
  const int d = spec.rank;
  ParameterSet ps;
  try {
    ps.fixed.beta_x = pooled_glm(data);
  } catch (const Error& e) {
    ps.fixed.beta_x = Eigen::VectorXd::Zero(p);
    if (warnings) warnings->push_back(std::string("initial GLM failed, using zeros: ") + e.what());
  }
  ps.fixed.b_tx = Eigen::MatrixXd::Zero(spec.num_traits, p);
  ps.signal.sigma = Eigen::VectorXd::Constant(p, 0.3);
  ps.signal.rho = Eigen::VectorXd::Constant(p, 0.5);
  ps.signal.shared_signal = spec.shared_signal;
  ps.sr = Eigen::MatrixXd::Identity(p, p);
  ps.state.a = Eigen::MatrixXd::Zero(p, m);
  ps.state.ar = 0.1 * Eigen::MatrixXd::Identity(p, p);
  ps.state.ad = Eigen::MatrixXd::Zero(m, d);
  for (int s = 0; s < d; ++s) ps.state.ad(s, s) = 0.01;
  ps.state.diag = Eigen::VectorXd::Zero(m);
  for (int j = d; j < m; ++j) ps.state.diag(j) = 0.1;
  return ps;
}

FitResult fit_model(const ModelData& data, const Eigen::MatrixXd& corr, const NeighborSets& sets,
                    const FitConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const int m = static_cast<int>(data.num_species());
  config.validate(m);
  ModelSpec spec;
  spec.num_species = m;
  spec.num_covariates = static_cast<int>(data.num_covariates());
  spec.num_traits = static_cast<int>(data.num_traits());
  spec.rank = config.rank;
  spec.ar = config.ar;
  spec.shared_signal = config.shared_signal;
  spec.sr_identity = config.sr_identity || spec.num_covariates == 1;

  const VariationalObjective objective(data, corr, sets, spec);
  FitResult res;
  res.spec = spec;
  res.ordering = sets.ordering;
  res.nn = sets.nn;
  res.rule = sets.rule;
  const ParameterSet init = initialize(objective.position_data(), spec, &res.warnings);
  const Eigen::VectorXd theta0 = objective.layout().pack(init);
  const GradientFunction fn = [&objective](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    return objective.value_and_gradient(x, g);
  };
  const LbfgsResult opt = maximize(fn, theta0, config.optimizer_options());
  res.converged = opt.converged;
  res.message = opt.message;
  res.iterations = opt.iterations;
  res.evaluations = opt.evaluations;
  res.trace = opt.trace;
  res.initial_elbo = opt.trace.front();
  res.elbo = opt.value;
  res.theta = opt.x;
  res.estimates = objective.layout().unpack(opt.x);
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (config.standard_errors) {
    res.standard_errors = standard_errors(objective, opt.x);
    if (!res.converged) res.standard_errors->message += " (fit did not converge)";
  }
  return res;
}

FitResult fit_model(const ModelData& data, const PhyloCorrelation& corr, const PhyloTree& tree, const FitConfig& config) {
  if (!data.species.empty() && data.species != corr.labels)
    throw DimensionError("data species do not match the correlation matrix labels");
  config.validate(static_cast<int>(data.num_species()));
  const Ordering ordering = make_ordering(corr, tree, config.ordering);
  const Eigen::MatrixXd c = config.repulsion ? repulsion_correlation(corr.matrix) : corr.matrix;
  const NeighborSets sets = neighbor_sets(c, ordering, config.nn, config.rule);
  return fit_model(data, c, sets, config);
}

StandardErrors standard_errors(const VariationalObjective& objective, const Eigen::VectorXd& theta) {
  const auto& layout = objective.layout();
  const auto& spec = layout.spec();
  const int n = layout.size();
  const int nm = layout.num_model_params();
  StandardErrors out;
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd gp, gm;
  try {
    for (int i = 0; i < n; ++i) {
      const double h = 1e-4 * std::max(1.0, std::abs(theta(i)));
      Eigen::VectorXd x = theta;
      x(i) = theta(i) + h;
      objective.value_and_gradient(x, gp);
      x(i) = theta(i) - h;
      objective.value_and_gradient(x, gm);
      hess.col(i) = (gp - gm) / (2.0 * h);
    }
  } catch (const Error& e) {
    out.message = std::string("Hessian evaluation failed: ") + e.what();
    return out;
  }
  const Eigen::MatrixXd info = -0.5 * (hess + hess.transpose());
  const int nv = n - nm;
  Eigen::MatrixXd profiled = info.topLeftCorner(nm, nm);
  if (nv > 0) {
    // Ar kron Am is invariant to (c Ar, Am / c), so the block always has a
    // null direction; profile with a pseudo-inverse over the rest.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> vv(info.bottomRightCorner(nv, nv));
    const Eigen::VectorXd ev = vv.eigenvalues();
    const double tol = 1e-6 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    if (vv.info() != Eigen::Success || ev.minCoeff() < -tol) {
      out.message = "variational block of the Hessian is not negative definite";
      return out;
    }
    const Eigen::VectorXd inv = ev.unaryExpr([tol](double e) { return e > tol ? 1.0 / e : 0.0; });
    const Eigen::MatrixXd proj = vv.eigenvectors().transpose() * info.bottomLeftCorner(nv, nm);
    profiled -= proj.transpose() * inv.asDiagonal() * proj;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(profiled);
  if (llt.info() != Eigen::Success) {
    out.message = "profiled Hessian is not negative definite";
    return out;
  }
  const Eigen::VectorXd var = llt.solve(Eigen::MatrixXd::Identity(nm, nm)).diagonal();
  const Eigen::VectorXd se = var.cwiseMax(0.0).cwiseSqrt();
  const int p = spec.num_covariates;
  const int t = spec.num_traits;
  const ParameterSet ps = layout.unpack(theta);
  out.beta_x = se.segment(layout.beta_offset(), p);
  out.b_tx.resize(t, p);
  for (int k = 0; k < p; ++k)
    for (int s = 0; s < t; ++s) out.b_tx(s, k) = se(layout.btx_offset() + s + t * k);
  out.sigma = se.segment(layout.log_sigma_offset(), p).cwiseProduct(ps.signal.sigma);
  out.rho.resize(p);
  for (int k = 0; k < p; ++k) {
    const double r = ps.signal.rho(k);
    out.rho(k) = se(layout.logit_rho_offset() + (spec.shared_signal ? 0 : k)) * r * (1.0 - r);
  }
  out.sr_params = se.segment(layout.sr_offset(), layout.a_offset() - layout.sr_offset());
  out.available = true;
  out.message = "ok";
  return out;
}

std::vector<EffectRow> predict_effects(const FitResult& fit, const ModelData& data) {
  const Eigen::MatrixXd a = fit.species_means();
  const Eigen::VectorXd amd = fit.species_variances();
  const auto& est = fit.estimates;
  const Eigen::Index p = a.rows();
  const Eigen::Index m = a.cols();
  std::vector<EffectRow> rows;
  rows.reserve(static_cast<std::size_t>(m * p));
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::VectorXd mean = est.fixed.beta_x;
    if (data.num_traits() > 0) mean += est.fixed.b_tx.transpose() * data.traits.row(j).transpose();
    for (Eigen::Index k = 0; k < p; ++k) {
      EffectRow r;
      r.species = j < static_cast<Eigen::Index>(data.species.size()) ? data.species[j] : "sp" + std::to_string(j + 1);
      r.covariate = k < static_cast<Eigen::Index>(data.covariates.size()) ? data.covariates[k] : "x" + std::to_string(k + 1);
      r.community_mean = mean(k);
      r.deviation = a(k, j);
      r.effect = r.community_mean + r.deviation;
      r.sd = std::sqrt(est.state.ar(k, k) * amd(j));
      r.effect_lower = r.effect - 1.96 * r.sd;
      r.effect_upper = r.effect + 1.96 * r.sd;
      r.lower = r.deviation - 1.96 * r.sd;
      r.upper = r.deviation + 1.96 * r.sd;
      r.covers_zero = r.lower <= 0.0 && r.upper >= 0.0;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace phylova
