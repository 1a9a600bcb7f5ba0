#include "phylova/elbo.hpp"

#include <cmath>
#include <string>

#include "phylova/error.hpp"
#include "phylova/parallel.hpp"
#include "phylova/simd.hpp"

namespace phylova {

const char* family_name(Family f) { return f == Family::bernoulli ? "bernoulli" : "poisson"; }

const char* link_name(Link l) {
  switch (l) {
    case Link::probit:
      return "probit";
    case Link::logit:
      return "logit";
    case Link::log:
      return "log";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "bernoulli" || name == "binomial") return Family::bernoulli;
  if (name == "poisson") return Family::poisson;
  throw InvalidArgument("unknown response family '" + std::string(name) + "'");
}

Link parse_link(std::string_view name) {
  if (name == "probit") return Link::probit;
  if (name == "logit") return Link::logit;
  if (name == "log") return Link::log;
  throw InvalidArgument("unknown link '" + std::string(name) + "'");
}

Link default_link(Family f) { return f == Family::bernoulli ? Link::probit : Link::log; }

namespace {

void check_response(Family family, double y) {
  if (!std::isfinite(y)) throw InvalidArgument("non-finite response");
  if (family == Family::bernoulli) {
    if (y != 0.0 && y != 1.0) throw InvalidArgument("Bernoulli responses must be 0 or 1");
  } else if (y < 0.0 || y != std::floor(y)) {
    throw InvalidArgument("Poisson responses must be non-negative integers");
  }
}

void check_link(Family family, Link link) {
  if (family == Family::bernoulli && link == Link::log) throw InvalidArgument("Bernoulli requires a probit or logit link");
  if (family == Family::poisson && link != Link::log) throw InvalidArgument("Poisson requires the log link");
}

simd::CellKernel cell_kernel(const simd::KernelTable& table, Family family, Link link) {
  if (family == Family::poisson) return table.poisson;
  return link == Link::logit ? table.logit : table.probit;
}

double log_factorial_sum(const ModelData& data) {
  if (data.family != Family::poisson) return 0.0;
  double s = 0.0;
  for (Eigen::Index j = 0; j < data.y.cols(); ++j)
    for (Eigen::Index i = 0; i < data.y.rows(); ++i)
      if (data.is_observed(i, j)) s += std::lgamma(data.y(i, j) + 1.0);
  return s;
}

}  // namespace

void ModelData::validate() const {
  const auto n = y.rows();
  const auto m = y.cols();
  if (x.rows() != n) throw DimensionError("covariate rows do not match response rows");
  if (traits.size() > 0 && traits.rows() != m) throw DimensionError("trait rows do not match species");
  if (observed.size() > 0 && (observed.rows() != n || observed.cols() != m))
    throw DimensionError("observation mask has the wrong shape");
  if (!species.empty() && static_cast<Eigen::Index>(species.size()) != m)
    throw DimensionError("species labels do not match response columns");
  check_link(family, link);
  if (!x.allFinite()) throw InvalidArgument("covariates contain non-finite values");
  if (traits.size() > 0 && !traits.allFinite()) throw InvalidArgument("traits contain non-finite values");
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (is_observed(i, j)) check_response(family, y(i, j));
}

ModelData ModelData::permuted(const Ordering& ordering) const {
  const auto m = y.cols();
  if (static_cast<Eigen::Index>(ordering.size()) != m) throw DimensionError("ordering does not match species");
  ModelData out = *this;
  for (Eigen::Index pos = 0; pos < m; ++pos) {
    const int s = ordering.order[pos];
    out.y.col(pos) = y.col(s);
    if (observed.size() > 0) out.observed.col(pos) = observed.col(s);
    if (traits.size() > 0) out.traits.row(pos) = traits.row(s);
    if (!species.empty()) out.species[pos] = species[s];
  }
  return out;
}

// ---------------------------------------------------------------------------
// variational state

Eigen::VectorXd VariationalState::am_diagonal() const {
  return ad.rowwise().squaredNorm() + diag;
}

Eigen::MatrixXd VariationalState::am() const {
  Eigen::MatrixXd out = ad * ad.transpose();
  out.diagonal() += diag;
  return out;
}

double VariationalState::logdet_am() const {
  const Eigen::Index d = rank();
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) s += 2.0 * std::log(ad(k, k));
  for (Eigen::Index j = d; j < diag.size(); ++j) s += std::log(diag(j));
  return s;
}

void VariationalState::validate(bool ar_diagonal) const {
  const auto p = a.rows();
  const auto m = a.cols();
  const auto d = ad.cols();
  if (ar.rows() != p || ar.cols() != p) throw DimensionError("Ar must be p x p");
  if (ad.rows() != m || d > m) throw DimensionError("Ad must be m x d with d <= m");
  if (diag.size() != m) throw DimensionError("D must have m entries");
  for (Eigen::Index s = 0; s < d; ++s) {
    if (!(ad(s, s) > 0.0)) throw InvalidArgument("Ad must have a positive diagonal");
    for (Eigen::Index j = 0; j < s; ++j)
      if (ad(j, s) != 0.0) throw InvalidArgument("Ad must be lower triangular");
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    if (j < d && diag(j) != 0.0) throw InvalidArgument("the first d entries of D must be zero");
    if (j >= d && !(diag(j) > 0.0)) throw InvalidArgument("D must be positive beyond the first d entries");
  }
  if (ar_diagonal && !(ar.array() * (1.0 - Eigen::MatrixXd::Identity(p, p).array()) == 0.0).all())
    throw InvalidArgument("diagonal Ar has non-zero off-diagonal entries");
  Eigen::LLT<Eigen::MatrixXd> llt(ar);
  if (llt.info() != Eigen::Success) throw InvalidArgument("Ar is not positive definite");
}

PredictorMoments predictor_moments(const ModelData& data, const FixedEffects& fixed, const VariationalState& state,
                                   Eigen::Index i, Eigen::Index j) {
  if (i < 0 || i >= data.num_sites() || j < 0 || j >= data.num_species())
    throw InvalidArgument("cell index out of range");
  Eigen::VectorXd coef = fixed.beta_x + state.a.col(j);
  if (data.num_traits() > 0) coef += fixed.b_tx.transpose() * data.traits.row(j).transpose();
  const Eigen::VectorXd xi = data.x.row(i).transpose();
  const double amjj = state.ad.row(j).squaredNorm() + state.diag(j);
  return {xi.dot(coef), amjj * xi.dot(state.ar * xi)};
}

double expected_loglik(Family family, Link link, double y, double mean, double variance) {
  if (!(variance >= 0.0)) throw InvalidArgument("negative predictor variance");
  check_link(family, link);
  check_response(family, y);
  double ll = 0.0, g1 = 0.0, g2 = 0.0;
  simd::CellBatch batch{&y, &mean, &variance, 1, &ll, &g1, &g2};
  cell_kernel(simd::scalar_kernels(), family, link)(batch);
  if (family == Family::poisson) ll -= std::lgamma(y + 1.0);
  return ll;
}

// ---------------------------------------------------------------------------
// core evaluation shared by elbo() and the objective

namespace {

struct Gradients {
  Eigen::VectorXd beta;   // p
  Eigen::MatrixXd btx;    // t x p
  Eigen::MatrixXd a;      // p x m
  Eigen::MatrixXd ar;     // p x p, d/dAr_kl per entry (symmetric)
  Eigen::MatrixXd ad;     // m x d, per entry
  Eigen::VectorXd diag;   // m
  Eigen::VectorXd log_sigma;  // p
  Eigen::VectorXd rho;        // p
  Eigen::MatrixXd sr;         // p x p, per entry

  void zero(Eigen::Index p, Eigen::Index m, Eigen::Index t, Eigen::Index d) {
    beta.setZero(p);
    btx.setZero(t, p);
    a.setZero(p, m);
    ar.setZero(p, p);
    ad.setZero(m, d);
    diag.setZero(m);
    log_sigma.setZero(p);
    rho.setZero(p);
    sr.setZero(p, p);
  }
};

double data_term(const ModelData& data, const FixedEffects& fixed, const VariationalState& state,
                 double log_factorials, Gradients* grad) {
  const Eigen::Index n = data.num_sites();
  const Eigen::Index m = data.num_species();
  const Eigen::Index p = data.num_covariates();
  if (n == 0) return 0.0;
  Eigen::MatrixXd coef = state.a;
  coef.colwise() += fixed.beta_x;
  if (data.num_traits() > 0) coef.noalias() += fixed.b_tx.transpose() * data.traits.transpose();
  const Eigen::MatrixXd eta = data.x * coef;
  const Eigen::VectorXd q = ((data.x * state.ar).array() * data.x.array()).rowwise().sum();
  const Eigen::VectorXd amd = state.am_diagonal();
  const Eigen::MatrixXd var = q * amd.transpose();

  Eigen::MatrixXd ll(n, m), gmu(n, m), gvar(n, m);
  const auto kernel = cell_kernel(simd::active_kernels(), data.family, data.link);
  Eigen::VectorXd column_sums(m);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t js) {
    const auto j = static_cast<Eigen::Index>(js);
    simd::CellBatch batch{data.y.col(j).data(), eta.col(j).data(), var.col(j).data(), static_cast<std::size_t>(n),
                          ll.col(j).data(),     gmu.col(j).data(), gvar.col(j).data()};
    kernel(batch);
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (data.is_observed(i, j)) {
        s += ll(i, j);
      } else {
        gmu(i, j) = 0.0;
        gvar(i, j) = 0.0;
      }
    }
    column_sums(j) = s;
  });
  double total = -log_factorials;
  for (Eigen::Index j = 0; j < m; ++j) total += column_sums(j);

  if (grad) {
    const Eigen::MatrixXd dcoef = data.x.transpose() * gmu;  // p x m
    grad->a += dcoef;
    grad->beta += dcoef.rowwise().sum();
    if (data.num_traits() > 0) grad->btx += (dcoef * data.traits).transpose();
    const Eigen::VectorXd d_amd = gvar.transpose() * q;
    const Eigen::VectorXd site_weight = gvar * amd;
    grad->ar += data.x.transpose() * site_weight.asDiagonal() * data.x;
    for (Eigen::Index s = 0; s < state.rank(); ++s) grad->ad.col(s) += 2.0 * state.ad.col(s).cwiseProduct(d_amd);
    grad->diag += d_amd;
  }
  (void)p;
  return total;
}

// Returns KL(q || prior); when grad is set, subtracts dKL from it.
double kl_term(const VariationalState& st, const PriorFactor& prior, Gradients* grad) {
  const Eigen::Index p = static_cast<Eigen::Index>(prior.num_covariates());
  const Eigen::Index m = static_cast<Eigen::Index>(prior.num_species());
  const Eigen::Index d = st.rank();
  if (st.a.rows() != p || st.a.cols() != m || st.ar.rows() != p || st.ad.rows() != m || st.diag.size() != m)
    throw DimensionError("variational state does not match the prior");
  const auto& kern = simd::active_kernels();

  Eigen::MatrixXd z(m, p);
  std::vector<Eigen::MatrixXd> wd(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const Eigen::VectorXd row = st.a.row(k).transpose();
    z.col(k) = prior.U(k).apply_U(std::span<const double>(row.data(), static_cast<std::size_t>(m)));
    wd[k] = multiply_U(prior.U(k), st.ad);
  }
  Eigen::MatrixXd tau(p, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    for (Eigen::Index l = k; l < p; ++l) {
      double t = pattern_weighted_inner(prior.U(k), prior.U(l), st.diag);
      for (Eigen::Index s = 0; s < d; ++s)
        t += kern.dot(wd[k].col(s).data(), wd[l].col(s).data(), static_cast<std::size_t>(m));
      tau(k, l) = t;
      tau(l, k) = t;
    }
  }
  const Eigen::MatrixXd phi = prior.sr_inv.cwiseProduct(st.ar);
  const Eigen::MatrixXd gram = z.transpose() * z;
  const double trace = (phi.array() * tau.array()).sum();
  const double quad = (prior.sr_inv.array() * gram.array()).sum();
  Eigen::LLT<Eigen::MatrixXd> ar_llt(st.ar);
  if (ar_llt.info() != Eigen::Success) throw NumericalError("Ar is not positive definite");
  const double logdet_ar = 2.0 * ar_llt.matrixLLT().diagonal().array().log().sum();
  const double logdet_am = st.logdet_am();
  const double kl = 0.5 * (trace + quad - static_cast<double>(p * m) + prior_logdet(prior) -
                           static_cast<double>(m) * logdet_ar - static_cast<double>(p) * logdet_am);
  if (!grad) return kl;

  const Eigen::MatrixXd w = z * prior.sr_inv;  // column k: sum_l Sr^-1_kl z_l
  Eigen::MatrixXd d_ad = Eigen::MatrixXd::Zero(m, d);
  Eigen::VectorXd d_diag = Eigen::VectorXd::Zero(m);
  std::vector<Eigen::MatrixXd> v(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    v[k] = Eigen::MatrixXd::Zero(m, d);
    for (Eigen::Index l = 0; l < p; ++l)
      if (phi(k, l) != 0.0) v[k] += phi(k, l) * wd[l];
    const Eigen::VectorXd wk = w.col(k);
    grad->a.row(k) -= prior.U(k).apply_Ut(std::span<const double>(wk.data(), static_cast<std::size_t>(m))).transpose();
    if (d > 0) d_ad += multiply_Ut(prior.U(k), v[k]);
  }

  // per-entry gradients of the sparse factors -> (b, f) -> (rho, log sigma)
  for (Eigen::Index k = 0; k < p; ++k) {
    const auto& block = prior.blocks[k];
    const auto& uk = block.factor;
    if (block.d_cond_var.empty()) throw InvalidArgument("prior was built without rho derivatives");
    double d_rho = 0.0;
    double d_log_sigma = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto nb = uk.neighbors(i);
      const auto bk = uk.weights(i);
      const double f = uk.cond_var(i);
      const double sf = 1.0 / std::sqrt(f);
      const double sf3 = sf / f;
      // S_k(i, c) = sum_l phi_kl U_l(i, c)
      double s_diag = 0.0;
      for (Eigen::Index l = 0; l < p; ++l) s_diag += phi(k, l) / std::sqrt(prior.U(l).cond_var(i));
      const double u_diag = sf;
      double g_diag = st.diag(i) * s_diag + w(i, k) * st.a(k, i);
      if (d > 0) g_diag += v[k].row(i).dot(st.ad.row(i));
      d_diag(i) += 0.5 * u_diag * s_diag;
      double dkl_df = -0.5 * sf3 * g_diag + 0.5 / f;
      const std::size_t base = uk.offsets()[i];
      for (std::size_t r = 0; r < nb.size(); ++r) {
        const int c = nb[r];
        double s_off = 0.0;
        for (Eigen::Index l = 0; l < p; ++l) {
          const auto& ul = prior.U(l);
          s_off -= phi(k, l) * ul.weights(i)[r] / std::sqrt(ul.cond_var(i));
        }
        const double u_off = -bk[r] * sf;
        double g_off = st.diag(c) * s_off + w(i, k) * st.a(k, c);
        if (d > 0) g_off += v[k].row(i).dot(st.ad.row(c));
        d_diag(c) += 0.5 * u_off * s_off;
        dkl_df += 0.5 * bk[r] * sf3 * g_off;
        const double dkl_db = -g_off * sf;
        d_rho += dkl_db * block.d_weights[base + r];
      }
      d_rho += dkl_df * block.d_cond_var[i];
      d_log_sigma += 2.0 * f * dkl_df;
    }
    grad->rho(k) -= d_rho;
    grad->log_sigma(k) -= d_log_sigma;
  }

  for (Eigen::Index s = 0; s < d; ++s) d_ad(s, s) -= static_cast<double>(p) / st.ad(s, s);
  for (Eigen::Index j = d; j < m; ++j) d_diag(j) -= 0.5 * static_cast<double>(p) / st.diag(j);
  grad->ad -= d_ad;
  grad->diag -= d_diag;

  const Eigen::MatrixXd ar_inv = ar_llt.solve(Eigen::MatrixXd::Identity(p, p));
  grad->ar -= 0.5 * prior.sr_inv.cwiseProduct(tau) - 0.5 * static_cast<double>(m) * ar_inv;
  const Eigen::MatrixXd h = 0.5 * (st.ar.cwiseProduct(tau) + gram);
  grad->sr -= -prior.sr_inv * h * prior.sr_inv + 0.5 * static_cast<double>(m) * prior.sr_inv;
  return kl;
}

}  // namespace

double kl_divergence(const VariationalState& state, const PriorFactor& prior) { return kl_term(state, prior, nullptr); }

double elbo(const ModelData& data, const FixedEffects& fixed, const VariationalState& state, const PriorFactor& prior) {
  if (data.num_species() != static_cast<Eigen::Index>(prior.num_species()) ||
      data.num_covariates() != static_cast<Eigen::Index>(prior.num_covariates()))
    throw DimensionError("data do not match the prior");
  const double value = data_term(data, fixed, state, log_factorial_sum(data), nullptr) - kl_term(state, prior, nullptr);
  if (!std::isfinite(value)) throw NumericalError("non-finite bound");
  return value;
}

// ---------------------------------------------------------------------------
// parameter layout

ParameterLayout::ParameterLayout(const ModelSpec& spec) : spec_(spec) {
  const int p = spec.num_covariates;
  const int m = spec.num_species;
  const int t = spec.num_traits;
  const int d = spec.rank;
  if (p < 1 || m < 1 || t < 0 || d < 0 || d > m) throw InvalidArgument("invalid model dimensions");
  beta_ = 0;
  btx_ = beta_ + p;
  sigma_ = btx_ + t * p;
  rho_ = sigma_ + p;
  sr_ = rho_ + (spec.shared_signal ? 1 : p);
  a_ = sr_ + (spec.sr_identity ? 0 : correlation_param_count(p));
  ar_ = a_ + p * m;
  ad_ = ar_ + (spec.ar == ArStructure::diagonal ? p : p * (p + 1) / 2);
  // lower-triangular m x d: column s holds rows s..m-1
  d_ = ad_ + d * m - d * (d - 1) / 2;
  total_ = d_ + (m - d);
}

std::string ParameterLayout::name(int index) const {
  const int p = spec_.num_covariates;
  const int t = spec_.num_traits;
  auto idx = [](std::initializer_list<int> v) {
    std::string s = "[";
    bool first = true;
    for (int x : v) {
      if (!first) s += ",";
      s += std::to_string(x);
      first = false;
    }
    return s + "]";
  };
  if (index < 0 || index >= total_) return "out-of-range";
  if (index < btx_) return "beta_x" + idx({index - beta_});
  if (index < sigma_) return "b_tx" + idx({(index - btx_) % t, (index - btx_) / t});
  if (index < rho_) return "log_sigma" + idx({index - sigma_});
  if (index < sr_) return "logit_rho" + idx({index - rho_});
  if (index < a_) return "sr_theta" + idx({index - sr_});
  if (index < ar_) return "a" + idx({(index - a_) % p, (index - a_) / p});
  if (index < ad_) return "ar_factor" + idx({index - ar_});
  if (index < d_) return "ad" + idx({index - ad_});
  return "log_d" + idx({index - d_ + spec_.rank});
}

Eigen::VectorXd ParameterLayout::pack(const ParameterSet& ps) const {
  const int p = spec_.num_covariates;
  const int m = spec_.num_species;
  const int t = spec_.num_traits;
  const int d = spec_.rank;
  Eigen::VectorXd theta(total_);
  theta.segment(beta_, p) = ps.fixed.beta_x;
  for (int k = 0; k < p; ++k)
    for (int s = 0; s < t; ++s) theta(btx_ + s + t * k) = ps.fixed.b_tx(s, k);
  for (int k = 0; k < p; ++k) theta(sigma_ + k) = std::log(ps.signal.sigma(k));
  const int nrho = spec_.shared_signal ? 1 : p;
  for (int k = 0; k < nrho; ++k) {
    const double r = std::clamp(ps.signal.rho(k), 1e-10, 1.0 - 1e-10);
    theta(rho_ + k) = std::log(r / (1.0 - r));
  }
  if (!spec_.sr_identity) theta.segment(sr_, correlation_param_count(p)) = params_from_correlation(ps.sr);
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < p; ++k) theta(a_ + k + p * j) = ps.state.a(k, j);
  if (spec_.ar == ArStructure::diagonal) {
    for (int k = 0; k < p; ++k) theta(ar_ + k) = 0.5 * std::log(ps.state.ar(k, k));
  } else {
    Eigen::LLT<Eigen::MatrixXd> llt(ps.state.ar);
    if (llt.info() != Eigen::Success) throw InvalidArgument("Ar is not positive definite");
    const Eigen::MatrixXd r = llt.matrixL();
    int idx = ar_;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j <= i; ++j) theta(idx++) = i == j ? std::log(r(i, i)) : r(i, j);
  }
  int idx = ad_;
  for (int s = 0; s < d; ++s)
    for (int j = s; j < m; ++j) theta(idx++) = j == s ? std::log(ps.state.ad(j, s)) : ps.state.ad(j, s);
  for (int j = d; j < m; ++j) theta(d_ + j - d) = std::log(ps.state.diag(j));
  return theta;
}

ParameterSet ParameterLayout::unpack(const Eigen::VectorXd& theta) const {
  if (theta.size() != total_) throw DimensionError("parameter vector has the wrong length");
  const int p = spec_.num_covariates;
  const int m = spec_.num_species;
  const int t = spec_.num_traits;
  const int d = spec_.rank;
  ParameterSet ps;
  ps.fixed.beta_x = theta.segment(beta_, p);
  ps.fixed.b_tx.resize(t, p);
  for (int k = 0; k < p; ++k)
    for (int s = 0; s < t; ++s) ps.fixed.b_tx(s, k) = theta(btx_ + s + t * k);
  ps.signal.sigma = theta.segment(sigma_, p).array().exp();
  ps.signal.rho.resize(p);
  ps.signal.shared_signal = spec_.shared_signal;
  for (int k = 0; k < p; ++k) {
    const double x = theta(rho_ + (spec_.shared_signal ? 0 : k));
    ps.signal.rho(k) = 1.0 / (1.0 + std::exp(-x));
  }
  ps.sr = spec_.sr_identity ? Eigen::MatrixXd::Identity(p, p)
                            : correlation_from_params(theta.segment(sr_, correlation_param_count(p)), p);
  ps.state.a.resize(p, m);
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < p; ++k) ps.state.a(k, j) = theta(a_ + k + p * j);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(p, p);
  if (spec_.ar == ArStructure::diagonal) {
    for (int k = 0; k < p; ++k) r(k, k) = std::exp(theta(ar_ + k));
  } else {
    int idx = ar_;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j <= i; ++j) r(i, j) = i == j ? std::exp(theta(idx++)) : theta(idx++);
  }
  ps.state.ar = r * r.transpose();
  ps.state.ad = Eigen::MatrixXd::Zero(m, d);
  int idx = ad_;
  for (int s = 0; s < d; ++s)
    for (int j = s; j < m; ++j) ps.state.ad(j, s) = j == s ? std::exp(theta(idx++)) : theta(idx++);
  ps.state.diag = Eigen::VectorXd::Zero(m);
  for (int j = d; j < m; ++j) ps.state.diag(j) = std::exp(theta(d_ + j - d));
  return ps;
}

// ---------------------------------------------------------------------------
// objective

VariationalObjective::VariationalObjective(const ModelData& data, const Eigen::MatrixXd& corr,
                                           const NeighborSets& sets, const ModelSpec& spec)
    : ordering_(sets.ordering), layout_(spec) {
  data.validate();
  const auto m = data.num_species();
  if (corr.rows() != m || corr.cols() != m || static_cast<Eigen::Index>(sets.size()) != m)
    throw DimensionError("correlation matrix, neighbour sets and data disagree on the number of species");
  if (spec.num_species != m || spec.num_covariates != data.num_covariates() || spec.num_traits != data.num_traits())
    throw DimensionError("model spec does not match the data");
  data_ = data.permuted(sets.ordering);
  // zero out unobserved responses so the cell kernels never see NaN
  if (data_.observed.size() > 0) data_.y = data_.observed.select(data_.y, 0.0);
  corr_.resize(m, m);
  const auto& ord = sets.ordering.order;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index l = 0; l < m; ++l) corr_(i, l) = corr(ord[i], ord[l]);
  sets_ = sets;
  sets_.ordering = identity_ordering(static_cast<std::size_t>(m));
  log_factorial_sum_ = log_factorial_sum(data_);
}

PriorFactor VariationalObjective::prior_at(const Eigen::VectorXd& theta) const {
  const ParameterSet ps = layout_.unpack(theta);
  return build_prior(corr_, sets_, ps.signal, ps.sr, false);
}

double VariationalObjective::value(const Eigen::VectorXd& theta) const {
  const ParameterSet ps = layout_.unpack(theta);
  const PriorFactor prior = build_prior(corr_, sets_, ps.signal, ps.sr, false);
  return data_term(data_, ps.fixed, ps.state, log_factorial_sum_, nullptr) - kl_term(ps.state, prior, nullptr);
}

double VariationalObjective::value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& out) const {
  const ModelSpec& spec = layout_.spec();
  const int p = spec.num_covariates;
  const int m = spec.num_species;
  const int t = spec.num_traits;
  const int d = spec.rank;
  const ParameterSet ps = layout_.unpack(theta);
  const PriorFactor prior = build_prior(corr_, sets_, ps.signal, ps.sr, true);
  Gradients g;
  g.zero(p, m, t, d);
  const double value =
      data_term(data_, ps.fixed, ps.state, log_factorial_sum_, &g) - kl_term(ps.state, prior, &g);

  out.resize(layout_.size());
  out.segment(layout_.beta_offset(), p) = g.beta;
  for (int k = 0; k < p; ++k)
    for (int s = 0; s < t; ++s) out(layout_.btx_offset() + s + t * k) = g.btx(s, k);
  out.segment(layout_.log_sigma_offset(), p) = g.log_sigma;
  if (spec.shared_signal) {
    const double r = ps.signal.rho(0);
    out(layout_.logit_rho_offset()) = g.rho.sum() * r * (1.0 - r);
  } else {
    for (int k = 0; k < p; ++k) {
      const double r = ps.signal.rho(k);
      out(layout_.logit_rho_offset() + k) = g.rho(k) * r * (1.0 - r);
    }
  }
  if (!spec.sr_identity) {
    const int np = correlation_param_count(p);
    out.segment(layout_.sr_offset(), np) =
        correlation_params_gradient(theta.segment(layout_.sr_offset(), np), p, g.sr);
  }
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < p; ++k) out(layout_.a_offset() + k + p * j) = g.a(k, j);

  // Ar = R R' with R lower triangular
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(p, p);
  if (spec.ar == ArStructure::diagonal) {
    for (int k = 0; k < p; ++k) r(k, k) = std::exp(theta(layout_.ar_offset() + k));
  } else {
    int idx = layout_.ar_offset();
    for (int i = 0; i < p; ++i)
      for (int j = 0; j <= i; ++j) r(i, j) = i == j ? std::exp(theta(idx++)) : theta(idx++);
  }
  const Eigen::MatrixXd d_r = (g.ar + g.ar.transpose()) * r;
  if (spec.ar == ArStructure::diagonal) {
    for (int k = 0; k < p; ++k) out(layout_.ar_offset() + k) = d_r(k, k) * r(k, k);
  } else {
    int idx = layout_.ar_offset();
    for (int i = 0; i < p; ++i)
      for (int j = 0; j <= i; ++j) out(idx++) = i == j ? d_r(i, i) * r(i, i) : d_r(i, j);
  }
  int idx = layout_.ad_offset();
  for (int s = 0; s < d; ++s)
    for (int j = s; j < m; ++j) out(idx++) = j == s ? g.ad(j, s) * ps.state.ad(j, s) : g.ad(j, s);
  for (int j = d; j < m; ++j) out(layout_.log_d_offset() + j - d) = g.diag(j) * ps.state.diag(j);

  for (int i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out(i))) throw NumericalError("non-finite gradient for " + layout_.name(i));
  }
  if (!std::isfinite(value)) throw NumericalError("non-finite bound");
  return value;
}

}  // namespace phylova
