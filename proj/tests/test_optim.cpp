#include <gtest/gtest.h>

#include <cmath>

#include "dpcalib/optim.hpp"

using namespace dpcalib;

TEST(Lbfgs, RosenbrockFromClassicStart) {
  auto rosen = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double a = 1.0 - x(0);
    const double b = x(1) - x(0) * x(0);
    g.resize(2);
    g(0) = -2.0 * a - 400.0 * x(0) * b;
    g(1) = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  Eigen::VectorXd lower = Eigen::VectorXd::Constant(2, -10.0);
  LbfgsOptions opts;
  opts.grad_tol = 1e-10;
  opts.obj_tol = 0.0;
  opts.max_evals = 2000;
  const auto r = minimize_lbfgs_box(rosen, x0, lower, opts);
  EXPECT_NEAR(r.x(0), 1.0, 1e-6);
  EXPECT_NEAR(r.x(1), 1.0, 1e-6);
  EXPECT_EQ(r.termination, LbfgsTermination::GradientTolerance);
}

TEST(Lbfgs, ActiveBoundIsRespected) {
  // Unconstrained minimum at (-3, 2); the box x >= (0, 0) pins the first coordinate.
  auto quad = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g.resize(2);
    g(0) = 2.0 * (x(0) + 3.0) + 0.5 * (x(1) - 2.0);
    g(1) = 4.0 * (x(1) - 2.0) + 0.5 * (x(0) + 3.0);
    return (x(0) + 3.0) * (x(0) + 3.0) + 2.0 * (x(1) - 2.0) * (x(1) - 2.0) + 0.5 * (x(0) + 3.0) * (x(1) - 2.0);
  };
  Eigen::VectorXd x0(2);
  x0 << 5.0, 5.0;
  const auto r = minimize_lbfgs_box(quad, x0, Eigen::VectorXd::Zero(2));
  EXPECT_EQ(r.x(0), 0.0);
  // With x0 pinned at 0: 4(y−2) + 1.5 = 0.
  EXPECT_NEAR(r.x(1), 2.0 - 1.5 / 4.0, 1e-6);
  EXPECT_GE(r.x.minCoeff(), 0.0);
}

TEST(Lbfgs, StartOutsideBoxIsProjected) {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = 2.0 * x;
    return x.squaredNorm();
  };
  Eigen::VectorXd x0(2);
  x0 << -5.0, 3.0;
  Eigen::VectorXd lower(2);
  lower << 1.0, -1.0;
  const auto r = minimize_lbfgs_box(f, x0, lower);
  EXPECT_NEAR(r.x(0), 1.0, 1e-12);
  EXPECT_NEAR(r.x(1), 0.0, 1e-6);
}

TEST(Lbfgs, EvaluationBudgetIsHonoured) {
  int calls = 0;
  auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    ++calls;
    g = Eigen::VectorXd::Constant(1, std::cos(x(0)) * 3.0 + 4.0 * x(0) * x(0) * x(0));
    return std::sin(x(0)) * 3.0 + std::pow(x(0), 4);
  };
  LbfgsOptions opts;
  opts.max_evals = 5;
  opts.grad_tol = 0.0;
  opts.obj_tol = 0.0;
  const auto r = minimize_lbfgs_box(f, Eigen::VectorXd::Constant(1, 3.0), Eigen::VectorXd::Constant(1, -10.0), opts);
  EXPECT_LE(r.evaluations, 5 + opts.max_backtracks);
  EXPECT_EQ(calls, r.evaluations);
}
