#pragma once

// Limited-memory BFGS with gradient projection onto a lower-bound box.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <vector>

namespace dpcalib {

struct LbfgsOptions {
  int memory = 6;
  int max_evals = 500;
  double grad_tol = 1e-6;  // on the projected gradient, ∞-norm
  double obj_tol = 1e-8;   // on |ΔL| between accepted iterates
  double armijo_c = 1e-4;
  int max_backtracks = 40;
};

enum class LbfgsTermination { GradientTolerance, ObjectiveTolerance, MaxEvaluations, LineSearchFailure };

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int evaluations = 0;
  int iterations = 0;
  LbfgsTermination termination = LbfgsTermination::MaxEvaluations;
};

/// Objective callback: returns f(x) and writes ∇f(x) into grad.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// Minimize f subject to x >= lower, starting from the projection of x0.
inline LbfgsResult minimize_lbfgs_box(const Objective& f, Eigen::VectorXd x0,
                                      const Eigen::VectorXd& lower, const LbfgsOptions& opts = {}) {
  const auto n = x0.size();
  auto project = [&](Eigen::VectorXd v) { return v.cwiseMax(lower); };
  // Components pinned at the bound whose gradient pushes further out are frozen.
  auto active = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    Eigen::Array<bool, Eigen::Dynamic, 1> a(n);
    for (Eigen::Index i = 0; i < n; ++i) a(i) = x(i) <= lower(i) + 1e-14 && g(i) > 0.0;
    return a;
  };
  auto projected_grad = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    Eigen::VectorXd pg = g;
    const auto act = active(x, g);
    for (Eigen::Index i = 0; i < n; ++i) if (act(i)) pg(i) = 0.0;
    return pg;
  };

  LbfgsResult r;
  r.x = project(std::move(x0));
  r.grad.resize(n);
  r.f = f(r.x, r.grad);
  r.evaluations = 1;

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  Eigen::VectorXd g_new(n);

  for (;;) {
    const Eigen::VectorXd pg = projected_grad(r.x, r.grad);
    if (pg.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      r.termination = LbfgsTermination::GradientTolerance;
      return r;
    }
    if (r.evaluations >= opts.max_evals) {
      r.termination = LbfgsTermination::MaxEvaluations;
      return r;
    }

    // Two-loop recursion on the free subspace.
    Eigen::VectorXd q = pg;
    const auto m = s_hist.size();
    std::vector<double> alpha(m);
    for (std::size_t i = m; i-- > 0;) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      alpha[i] = rho * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < m; ++i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      const double beta = rho * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    const auto act = active(r.x, r.grad);
    for (Eigen::Index i = 0; i < n; ++i) if (act(i)) dir(i) = 0.0;
    if (!(dir.dot(r.grad) < 0.0) || !dir.allFinite()) {
      s_hist.clear();
      y_hist.clear();
      dir = -pg;
    }
    // First step without curvature information: unit length in the steepest-descent direction.
    double step = s_hist.empty() ? std::min(1.0, 1.0 / dir.lpNorm<Eigen::Infinity>()) : 1.0;

    bool accepted = false;
    Eigen::VectorXd x_new(n);
    double f_new = 0.0;
    for (int bt = 0; bt < opts.max_backtracks && r.evaluations < opts.max_evals; ++bt) {
      x_new = project(r.x + step * dir);
      f_new = f(x_new, g_new);
      ++r.evaluations;
      if (std::isfinite(f_new) && f_new <= r.f + opts.armijo_c * r.grad.dot(x_new - r.x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      r.termination = r.evaluations >= opts.max_evals ? LbfgsTermination::MaxEvaluations
                                                      : LbfgsTermination::LineSearchFailure;
      return r;
    }
    ++r.iterations;
    const Eigen::VectorXd s = x_new - r.x;
    const Eigen::VectorXd y = g_new - r.grad;
    const double df = r.f - f_new;
    r.x = x_new;
    r.f = f_new;
    r.grad = g_new;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    if (std::abs(df) < opts.obj_tol) {
      r.termination = LbfgsTermination::ObjectiveTolerance;
      return r;
    }
  }
}

}  // namespace dpcalib
