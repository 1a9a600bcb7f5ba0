#include "phylova/optim.hpp"

#include <cmath>
#include <deque>

#include "phylova/error.hpp"

namespace phylova {

namespace {

struct Pair {
  Eigen::VectorXd s;
  Eigen::VectorXd y;
  double rho;
};

// Two-loop recursion for the minimisation problem -f; returns the descent direction.
Eigen::VectorXd direction(const std::deque<Pair>& pairs, const Eigen::VectorXd& g) {
  Eigen::VectorXd q = g;
  std::vector<double> alpha(pairs.size());
  for (std::size_t i = pairs.size(); i-- > 0;) {
    alpha[i] = pairs[i].rho * pairs[i].s.dot(q);
    q -= alpha[i] * pairs[i].y;
  }
  if (!pairs.empty()) {
    const auto& last = pairs.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double beta = pairs[i].rho * pairs[i].y.dot(q);
    q += (alpha[i] - beta) * pairs[i].s;
  }
  return -q;
}

}  // namespace

LbfgsResult maximize(const GradientFunction& fn, const Eigen::VectorXd& x0, const LbfgsOptions& options) {
  if (options.grad_tol <= 0.0 || options.rel_tol <= 0.0 || options.memory < 1)
    throw InvalidArgument("optimizer tolerances and memory must be positive");
  const Eigen::Index n = x0.size();
  LbfgsResult res;
  // work with the minimisation of h = -f
  Eigen::VectorXd x = x0, g(n), x_new(n), g_new(n);
  double h = -fn(x, g);
  g = -g;
  ++res.evaluations;
  if (!std::isfinite(h)) throw NumericalError("objective is not finite at the initial point");
  res.trace.push_back(-h);
  const double gtol = options.grad_tol * static_cast<double>(std::max<Eigen::Index>(1, n));
  std::deque<Pair> pairs;

  auto finish = [&](bool converged, std::string message) {
    res.x = x;
    res.value = -h;
    res.grad = -g;
    res.converged = converged;
    res.message = std::move(message);
    return res;
  };

  if (n == 0 || g.lpNorm<Eigen::Infinity>() < gtol) return finish(true, "gradient tolerance");

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Eigen::VectorXd dir = direction(pairs, g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      pairs.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = pairs.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;
    bool accepted = false;
    double h_new = 0.0;
    for (int k = 0; k <= options.max_halvings; ++k, step *= 0.5) {
      x_new = x + step * dir;
      try {
        h_new = -fn(x_new, g_new);
      } catch (const NumericalError&) {
        continue;
      } catch (const ConditioningError&) {
        continue;
      }
      ++res.evaluations;
      if (std::isfinite(h_new) && h_new <= h + options.armijo * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!pairs.empty()) {
        pairs.clear();
        continue;
      }
      res.iterations = iter;
      return finish(false, "line search failed after " + std::to_string(options.max_halvings) + " halvings");
    }
    g_new = -g_new;
    Pair pr{x_new - x, g_new - g, 0.0};
    const double sy = pr.s.dot(pr.y);
    if (sy > 1e-10 * pr.s.norm() * pr.y.norm()) {
      pr.rho = 1.0 / sy;
      pairs.push_back(std::move(pr));
      if (static_cast<int>(pairs.size()) > options.memory) pairs.pop_front();
    }
    x = x_new;
    g = g_new;
    h = h_new;
    res.trace.push_back(-h);
    res.iterations = iter + 1;
    if (g.lpNorm<Eigen::Infinity>() < gtol) return finish(true, "gradient tolerance");
    const auto w = static_cast<std::size_t>(options.rel_window);
    if (res.trace.size() > w) {
      const double prev = res.trace[res.trace.size() - 1 - w];
      if (std::abs(-h - prev) < options.rel_tol * (1.0 + std::abs(h))) return finish(true, "relative objective tolerance");
    }
  }
  return finish(false, "iteration limit reached");
}

}  // namespace phylova
