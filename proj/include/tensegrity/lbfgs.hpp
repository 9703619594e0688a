#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace tensegrity::optim {

/// Returns f(x) and writes the gradient into `grad` (pre-sized to x.size()).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int max_iterations = 1000;
  int memory = 10;
  double gradient_tolerance = 1e-9;  // on max |g_i|
  double function_tolerance = 1e-14;  // relative decrease over one iteration
  int max_line_search = 40;
  double c1 = 1e-4;
  double c2 = 0.9;
};

enum class LbfgsStatus { GradientConverged, FunctionConverged, MaxIterations, LineSearchFailed };

std::string to_string(LbfgsStatus status);

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
  /// Objective after each accepted iteration, starting with f(x0).
  std::vector<double> history;

  bool converged() const {
    return status == LbfgsStatus::GradientConverged || status == LbfgsStatus::FunctionConverged;
  }
};

/// Limited-memory BFGS with a strong-Wolfe line search.
LbfgsResult minimize_lbfgs(const Objective& f, const Eigen::VectorXd& x0, const LbfgsOptions& options = {});

}  // namespace tensegrity::optim
