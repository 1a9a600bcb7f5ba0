#include <cmath>
#include <random>

#include "doctest.h"
#include "phylova/parallel.hpp"
#include "fixtures.hpp"
#include "phylova/error.hpp"
#include "phylova/fit.hpp"
#include "phylova/optim.hpp"
#include "phylova/simulate.hpp"

using namespace phylova;

TEST_CASE("L-BFGS maximises a concave quadratic") {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd a = oracle::random_spd(8, rng);
  const Eigen::VectorXd b = Eigen::VectorXd::Random(8);
  auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = b - a * x;
    return b.dot(x) - 0.5 * x.dot(a * x);
  };
  LbfgsOptions opt;
  opt.grad_tol = 1e-10;
  opt.rel_tol = 1e-15;
  const auto r = maximize(fn, Eigen::VectorXd::Zero(8), opt);
  CHECK(r.converged);
  CHECK((r.x - a.ldlt().solve(b)).norm() < 1e-7);
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] >= r.trace[i - 1]);
}

TEST_CASE("L-BFGS recovers the centre of an isotropic quadratic") {
  const Eigen::VectorXd target = Eigen::VectorXd::LinSpaced(6, -2.0, 3.0);
  auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = -2.0 * (x - target);
    return -(x - target).squaredNorm();
  };
  const auto r = maximize(fn, Eigen::VectorXd::Zero(6));
  CHECK(r.converged);
  CHECK(r.iterations <= 50);
  CHECK((r.x - target).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("L-BFGS on the Rosenbrock valley") {
  auto fn = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
    g.resize(2);
    g(0) = 2 * a + 400 * x(0) * b;
    g(1) = -200 * b;
    return -(a * a + 100 * b * b);
  };
  LbfgsOptions opt;
  opt.grad_tol = 1e-8;
  opt.rel_tol = 1e-16;
  const auto r = maximize(fn, Eigen::Vector2d(-1.2, 1.0), opt);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("a stationary start stops immediately") {
  auto fn = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = -x;
    return -0.5 * x.squaredNorm();
  };
  const auto r = maximize(fn, Eigen::VectorXd::Zero(4));
  CHECK(r.converged);
  CHECK(r.iterations == 0);
  CHECK(r.trace.size() == 1);
}

TEST_CASE("iteration cap is reported as non-convergence") {
  auto fn = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = Eigen::VectorXd(2);
    g << -2 * x(0), -2000 * x(1);
    return -(x(0) * x(0) + 1000 * x(1) * x(1));
  };
  LbfgsOptions opt;
  opt.max_iterations = 1;
  opt.grad_tol = 1e-12;
  const auto r = maximize(fn, Eigen::Vector2d(3, 1), opt);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 1);
}

TEST_CASE("fitting increases the bound monotonically") {
  SimProtocol proto;
  proto.n = 100;
  proto.m = 50;
  proto.p = 2;
  proto.seed = 8;
  const SimDataset ds = simulate_dataset(proto);
  FitConfig cfg;
  const FitResult fit = fit_model(ds.data, ds.corr, ds.tree, cfg);
  CHECK(fit.converged);
  REQUIRE(fit.trace.size() >= 2);
  for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i] >= fit.trace[i - 1]);
  CHECK(fit.elbo > fit.initial_elbo);
  CHECK(fit.reported_rho().minCoeff() >= 1e-6);
  CHECK(fit.reported_rho().maxCoeff() <= 1 - 1e-6);

  SUBCASE("restarting at the optimum changes nothing") {
    const VariationalObjective obj(ds.data, ds.corr.matrix,
                                   neighbor_sets(ds.corr.matrix, fit.ordering, fit.nn, fit.rule), fit.spec);
    auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return obj.value_and_gradient(x, g); };
    CHECK(obj.value(fit.theta) == doctest::Approx(fit.elbo).epsilon(1e-12));
    const auto again = maximize(fn, fit.theta, cfg.optimizer_options());
    CHECK(std::abs(again.value - fit.elbo) < 1e-6 * (1 + std::abs(fit.elbo)));
  }
}

TEST_CASE("initialisation") {
  std::mt19937_64 rng(2);
  ModelData data = fixture::random_data(40, 6, 2, 0, Family::bernoulli, Link::probit, rng);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 6; ++j) data.y(i, j) = (i + j) % 2;  // half ones at every site pattern
  data.x.col(1).setZero();
  const ModelSpec spec{6, 2, 0, 2};
  const ParameterSet a = initialize(data, spec);
  CHECK(std::abs(a.fixed.beta_x(0)) < 0.05);
  const ParameterSet b = initialize(data, spec);
  CHECK(a.fixed.beta_x == b.fixed.beta_x);
  a.state.validate();
  CHECK(a.state.ad(0, 0) > 0.0);
  CHECK(a.state.diag(0) == 0.0);
  CHECK(a.state.diag(2) > 0.0);
  CHECK(a.signal.rho(0) == 0.5);
}

TEST_CASE("Poisson intercept standard error") {
  // GLS reference: beta_hat ~ weighted mean of species log-rates with
  // covariance Sigma_b + diag(1 / (n mu_j))
  std::mt19937_64 rng(4);
  const int n = 200, m = 6;
  const double beta = 0.5;
  const auto tree = simulate_tree(m, 6);
  const auto corr = correlation_matrix(tree);
  const Eigen::MatrixXd kb = oracle::pagel(corr.matrix, 0.5, 0.5);
  const Eigen::VectorXd b = Eigen::LLT<Eigen::MatrixXd>(kb).matrixL() *
                            Eigen::VectorXd::NullaryExpr(m, [&] { return std::normal_distribution<double>()(rng); });
  ModelData data = fixture::random_data(n, m, 1, 0, Family::poisson, Link::log, rng);
  for (int j = 0; j < m; ++j) {
    std::poisson_distribution<int> pois(std::exp(beta + b(j)));
    for (int i = 0; i < n; ++i) data.y(i, j) = pois(rng);
  }
  data.species = corr.labels;
  FitConfig cfg;
  cfg.nn = m - 1;
  cfg.rank = 0;
  cfg.standard_errors = true;
  const FitResult fit = fit_model(data, corr, tree, cfg);
  REQUIRE(fit.standard_errors.has_value());
  INFO(fit.standard_errors->message, " sigma=", fit.estimates.signal.sigma(0), " conv=", fit.converged);
  REQUIRE(fit.standard_errors->available);
  Eigen::MatrixXd v = oracle::pagel(corr.matrix, fit.estimates.signal.rho(0), fit.estimates.signal.sigma(0));
  for (int j = 0; j < m; ++j) v(j, j) += 1.0 / (n * data.y.col(j).mean());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
  const double gls = 1.0 / std::sqrt(ones.dot(v.ldlt().solve(ones)));
  const double se = fit.standard_errors->beta_x(0);
  INFO("se=", se, " gls=", gls);
  CHECK(se == doctest::Approx(gls).epsilon(0.2));
  CHECK(fit.standard_errors->sigma(0) > 0.0);
}

TEST_CASE("effect tables") {
  SimProtocol proto;
  proto.n = 40;
  proto.m = 8;
  proto.p = 2;
  proto.intercept = true;
  proto.seed = 12;
  const SimDataset ds = simulate_dataset(proto);
  FitConfig cfg;
  cfg.nn = 3;
  const FitResult fit = fit_model(ds.data, ds.corr, ds.tree, cfg);
  const auto rows = predict_effects(fit, ds.data);
  REQUIRE(rows.size() == static_cast<std::size_t>(8 * 3));
  const Eigen::MatrixXd means = fit.species_means();
  const Eigen::VectorXd amd = fit.species_variances();
  for (const auto& r : rows) {
    CHECK(r.upper - r.lower == doctest::Approx(2 * 1.96 * r.sd));
    CHECK(r.effect == doctest::Approx(r.community_mean + r.deviation));
    CHECK(r.covers_zero == (r.lower <= 0.0 && r.upper >= 0.0));
  }
  CHECK(rows[0].species == ds.data.species[0]);
  CHECK(rows[0].deviation == doctest::Approx(means(0, 0)));
  CHECK(rows[0].sd == doctest::Approx(std::sqrt(fit.estimates.state.ar(0, 0) * amd(0))));

  FitResult zero = fit;
  zero.estimates.state.a.setZero();
  for (const auto& r : predict_effects(zero, ds.data)) CHECK(r.covers_zero);
}

TEST_CASE("fit configuration is validated") {
  SimProtocol proto;
  proto.n = 10;
  proto.m = 5;
  proto.p = 1;
  const SimDataset ds = simulate_dataset(proto);
  FitConfig cfg;
  cfg.nn = 5;
  CHECK_THROWS_AS(fit_model(ds.data, ds.corr, ds.tree, cfg), InvalidArgument);
  cfg.nn = 2;
  cfg.rank = 6;
  CHECK_THROWS_AS(fit_model(ds.data, ds.corr, ds.tree, cfg), InvalidArgument);
  cfg.rank = 1;
  ModelData wrong = ds.data;
  std::swap(wrong.species[0], wrong.species[1]);
  CHECK_THROWS_AS(fit_model(wrong, ds.corr, ds.tree, cfg), DimensionError);
}

TEST_CASE("optimisation trajectory does not depend on the thread count") {
  SimProtocol proto;
  proto.n = 60;
  proto.m = 30;
  proto.p = 2;
  proto.seed = 19;
  const SimDataset ds = simulate_dataset(proto);
  FitConfig cfg;
  cfg.nn = 5;
  set_num_threads(1);
  const FitResult one = fit_model(ds.data, ds.corr, ds.tree, cfg);
  set_num_threads(4);
  const FitResult four = fit_model(ds.data, ds.corr, ds.tree, cfg);
  set_num_threads(1);
  CHECK(one.trace == four.trace);
  CHECK(one.theta == four.theta);
}

TEST_CASE("duplicated covariates share their standard errors") {
  SimProtocol proto;
  proto.n = 120;
  proto.m = 6;
  proto.p = 1;
  proto.intercept = true;
  proto.seed = 23;
  SimDataset ds = simulate_dataset(proto);
  Eigen::MatrixXd x(ds.data.x.rows(), 3);
  x << ds.data.x, ds.data.x.col(1);
  ds.data.x = x;
  ds.data.covariates.push_back("x1_copy");
  FitConfig cfg;
  cfg.nn = 3;
  cfg.standard_errors = true;
  const FitResult fit = fit_model(ds.data, ds.corr, ds.tree, cfg);
  // only beta_1 + beta_2 is identified: the two get identical estimates and SEs
  REQUIRE(fit.standard_errors->available);
  const Eigen::VectorXd& se = fit.standard_errors->beta_x;
  CHECK(fit.estimates.fixed.beta_x(1) == doctest::Approx(fit.estimates.fixed.beta_x(2)).epsilon(1e-6));
  CHECK(se(1) == doctest::Approx(se(2)).epsilon(1e-3));
  CHECK(se(1) > 100 * se(0));
}
