#pragma once

// Limited-memory BFGS maximisation with backtracking (Armijo) line search.

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace phylova {

/// Returns f(x) and writes grad f(x).
using GradientFunction = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int max_iterations = 2000;
  int memory = 10;
  /// Stop when max|grad| < grad_tol * number of parameters.
  double grad_tol = 1e-5;
  /// Stop when |f_k - f_{k-window}| < rel_tol * (1 + |f_k|).
  double rel_tol = 1e-9;
  int rel_window = 3;
  int max_halvings = 40;
  double armijo = 1e-4;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;  // accepted objective values, starting with the initial point
};

LbfgsResult maximize(const GradientFunction& fn, const Eigen::VectorXd& x0, const LbfgsOptions& options = {});

}  // namespace phylova
