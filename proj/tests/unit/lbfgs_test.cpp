#include <gtest/gtest.h>

#include <cmath>

#include "tensegrity/lbfgs.hpp"

using namespace tensegrity::optim;

namespace {

double rosenbrock(const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  double f = 0.0;
  g.setZero();
  for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
    const double a = x(i + 1) - x(i) * x(i);
    const double b = 1.0 - x(i);
    f += 100.0 * a * a + b * b;
    g(i) += -400.0 * a * x(i) - 2.0 * b;
    g(i + 1) += 200.0 * a;
  }
  return f;
}

}  // namespace

TEST(Lbfgs, Quadratic) {
  Eigen::MatrixXd a(3, 3);
  a << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Eigen::Vector3d b(1, -2, 0.5);
  auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = a * x - b;
    return 0.5 * x.dot(a * x) - b.dot(x);
  };
  const auto r = minimize_lbfgs(f, Eigen::VectorXd::Zero(3));
  EXPECT_TRUE(r.converged());
  EXPECT_LT((r.x - a.ldlt().solve(b)).norm(), 1e-8);
}

TEST(Lbfgs, Rosenbrock) {
  Eigen::VectorXd x0(6);
  x0 << -1.2, 1, -1.2, 1, -1.2, 1;
  LbfgsOptions o;
  o.gradient_tolerance = 1e-10;
  const auto r = minimize_lbfgs(rosenbrock, x0, o);
  EXPECT_TRUE(r.converged()) << to_string(r.status);
  EXPECT_LT((r.x - Eigen::VectorXd::Ones(6)).norm(), 1e-6);
}

TEST(Lbfgs, HistoryIsMonotone) {
  Eigen::VectorXd x0(4);
  x0 << -1.2, 1, 0.5, -0.3;
  const auto r = minimize_lbfgs(rosenbrock, x0);
  ASSERT_GE(r.history.size(), 2u);
  for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LE(r.history[k], r.history[k - 1]);
}

TEST(Lbfgs, IterationLimit) {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1;
  LbfgsOptions o;
  o.max_iterations = 3;
  const auto r = minimize_lbfgs(rosenbrock, x0, o);
  EXPECT_EQ(r.status, LbfgsStatus::MaxIterations);
  EXPECT_FALSE(r.converged());
  EXPECT_EQ(r.iterations, 3);
}
