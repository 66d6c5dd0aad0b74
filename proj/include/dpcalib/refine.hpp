#pragma once

// Refinements on top of a moment-matched fit: the Dual-Anchor penalized objective, its
// λ-frontier, and KL fitting to a target cluster-count distribution.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpcalib/error.hpp"
#include "dpcalib/optim.hpp"
#include "dpcalib/quadrature.hpp"
#include "dpcalib/specfun.hpp"
#include "dpcalib/tsmm.hpp"
#include "dpcalib/weights.hpp"

namespace dpcalib {

struct DualAnchorConfig {
  double t = 0.5;
  double delta = 0.25;
  double lambda = 0.7;
  double trigger_level = kDominanceTrigger;
  double a_min = 0.01;
  double b_min = 0.01;
  int max_evals = 500;
  double grad_tol = 1e-6;
  double obj_tol = 1e-8;
  int order = kDefaultQuadratureOrder;

  void validate() const {
    if (!(t > 0.0 && t < 1.0)) throw InputError("dual-anchor threshold t must lie in (0, 1)");
    if (!(delta > 0.0 && delta < 1.0)) throw InputError("dual-anchor tolerance delta must lie in (0, 1)");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw InputError("dual-anchor lambda must lie in (0, 1]");
    if (!(a_min > 0.0 && b_min > 0.0)) throw InputError("dual-anchor box floor must be positive");
  }
};

enum class ConstraintStatus { SatisfiedAtInput, SatisfiedAfterRefinement, ParetoCompromise };

inline const char* to_string(ConstraintStatus s) {
  switch (s) {
    case ConstraintStatus::SatisfiedAtInput: return "satisfied_at_input";
    case ConstraintStatus::SatisfiedAfterRefinement: return "satisfied_after_refinement";
    case ConstraintStatus::ParetoCompromise: return "pareto_compromise";
  }
  return "?";
}

struct TradeoffReport {
  GammaHyperprior before;
  GammaHyperprior after;
  double mean_K_before = 0.0;
  double var_K_before = 0.0;
  double mean_K_after = 0.0;
  double var_K_after = 0.0;
  double delta_mu_K = 0.0;   // E[K] after − before
  double delta_var_K = 0.0;  // Var(K) after − before
  double dominance_before = 0.0;
  double dominance_after = 0.0;
  double t = 0.5;
  double delta = 0.25;
  double lambda = 0.7;
  ConstraintStatus constraint_status = ConstraintStatus::SatisfiedAtInput;
  std::vector<std::string> warnings;
};

/// Value and pieces of L_λ = λ·D₁ + (1−λ)·D₂ at one hyperprior.
struct DualAnchorObjective {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double dominance = 0.0;
  MixedMoments moments;
  Eigen::Vector2d grad_eta = Eigen::Vector2d::Zero();  // ∂L/∂(ln a, ln b)
};

inline DualAnchorObjective dual_anchor_objective(const ElicitationTarget& target,
                                                 const GammaHyperprior& hyper,
                                                 const DualAnchorConfig& cfg) {
  if (!(target.mu_K > 0.0 && target.var_K > 0.0)) {
    throw InputError("dual-anchor objective requires mu_K > 0 and var_K > 0");
  }
  const auto mj = moments_and_jacobian(target.J, hyper, *cached_rule(hyper.a, cfg.order));
  const auto tail = w1_survival(cfg.t, hyper);
  const double em = (mj.moments.mean - target.mu_K) / target.mu_K;
  const double ev = (mj.moments.variance - target.var_K) / target.var_K;
  const double hinge = std::max(0.0, tail.probability - cfg.delta);

  DualAnchorObjective o;
  o.moments = mj.moments;
  o.dominance = tail.probability;
  o.d1 = em * em + ev * ev;
  o.d2 = hinge * hinge;
  o.value = cfg.lambda * o.d1 + (1.0 - cfg.lambda) * o.d2;

  const auto& j = mj.jacobian;
  const double gm = 2.0 * em / target.mu_K;
  const double gv = 2.0 * ev / target.var_K;
  const double d1_da = gm * j.dmean_da + gv * j.dvar_da;
  const double d1_db = gm * j.dmean_db + gv * j.dvar_db;
  const double d2_da = 2.0 * hinge * tail.grad_a;
  const double d2_db = 2.0 * hinge * tail.grad_b;
  o.grad_eta(0) = hyper.a * (cfg.lambda * d1_da + (1.0 - cfg.lambda) * d2_da);
  o.grad_eta(1) = hyper.b * (cfg.lambda * d1_db + (1.0 - cfg.lambda) * d2_db);
  return o;
}

struct PenalizedSolution {
  GammaHyperprior hyper;
  DualAnchorObjective objective;
  int iterations = 0;
  int evaluations = 0;
  LbfgsTermination termination = LbfgsTermination::GradientTolerance;
};

/// Minimize L_λ over η = (ln a, ln b) with the box a >= a_min, b >= b_min.
inline PenalizedSolution solve_penalized(const ElicitationTarget& target, const GammaHyperprior& init,
                                         const DualAnchorConfig& cfg) {
  auto objective = [&](const Eigen::VectorXd& eta, Eigen::VectorXd& grad) {
    const GammaHyperprior h{std::exp(eta(0)), std::exp(eta(1))};
    const auto o = dual_anchor_objective(target, h, cfg);
    grad = o.grad_eta;
    return o.value;
  };
  LbfgsOptions lo;
  lo.max_evals = cfg.max_evals;
  lo.grad_tol = cfg.grad_tol;
  lo.obj_tol = cfg.obj_tol;
  Eigen::VectorXd lower(2);
  lower << std::log(cfg.a_min), std::log(cfg.b_min);
  Eigen::VectorXd x0(2);
  x0 << std::log(init.a), std::log(init.b);
  const auto res = minimize_lbfgs_box(objective, x0, lower, lo);

  PenalizedSolution s;
  s.hyper = {std::exp(res.x(0)), std::exp(res.x(1))};
  s.objective = dual_anchor_objective(target, s.hyper, cfg);
  s.iterations = res.iterations;
  s.evaluations = res.evaluations;
  s.termination = res.termination;
  return s;
}

inline Status status_from(LbfgsTermination t) {
  switch (t) {
    case LbfgsTermination::GradientTolerance:
    case LbfgsTermination::ObjectiveTolerance: return Status::Converged;
    case LbfgsTermination::MaxEvaluations: return Status::MaxIter;
    case LbfgsTermination::LineSearchFailure: return Status::LineSearchStall;
  }
  return Status::LineSearchStall;
}

struct DualAnchorResult {
  CalibrationResult fit;
  TradeoffReport tradeoff;
};

/// Dual-Anchor refinement of a moment-matched fit; returns the input unchanged when
/// Pr(w1 > t) <= delta already holds.
inline DualAnchorResult dual_anchor(const CalibrationResult& fit, const DualAnchorConfig& cfg = {}) {
  cfg.validate();
  const ElicitationTarget& target = fit.target;
  TradeoffReport tr;
  tr.t = cfg.t;
  tr.delta = cfg.delta;
  tr.lambda = cfg.lambda;
  tr.before = fit.hyper;
  tr.mean_K_before = fit.achieved.mean;
  tr.var_K_before = fit.achieved.variance;
  tr.dominance_before = w1_survival(cfg.t, fit.hyper).probability;

  if (tr.dominance_before <= cfg.delta) {
    tr.after = fit.hyper;
    tr.mean_K_after = tr.mean_K_before;
    tr.var_K_after = tr.var_K_before;
    tr.dominance_after = tr.dominance_before;
    tr.constraint_status = ConstraintStatus::SatisfiedAtInput;
    return {fit, tr};
  }

  const auto init_obj = dual_anchor_objective(target, fit.hyper, cfg);
  auto sol = solve_penalized(target, fit.hyper, cfg);
  if (!(sol.objective.value <= init_obj.value)) {
    // Never hand back something worse than the starting point.
    sol.hyper = fit.hyper;
    sol.objective = init_obj;
    sol.termination = LbfgsTermination::LineSearchFailure;
  }

  CalibrationResult out = fit;
  out.hyper = sol.hyper;
  out.achieved = sol.objective.moments;
  out.residual_inf_norm = moment_residual_inf(out.achieved, target);
  out.method = Method::DualAnchor;
  out.iterations = sol.iterations;
  out.status = status_from(sol.termination);
  out.objective = sol.objective.value;

  tr.after = sol.hyper;
  tr.mean_K_after = out.achieved.mean;
  tr.var_K_after = out.achieved.variance;
  tr.dominance_after = sol.objective.dominance;
  tr.delta_mu_K = tr.mean_K_after - tr.mean_K_before;
  tr.delta_var_K = tr.var_K_after - tr.var_K_before;
  if (tr.dominance_after <= cfg.delta + 1e-9) {
    tr.constraint_status = ConstraintStatus::SatisfiedAfterRefinement;
  } else {
    tr.constraint_status = ConstraintStatus::ParetoCompromise;
    std::ostringstream os;
    os.precision(4);
    os << "dominance constraint not met: Pr(w1 > " << cfg.t << ") = " << tr.dominance_after
       << " > delta = " << cfg.delta << " at lambda = " << cfg.lambda
       << "; result is a compromise between moment fidelity and dominance";
    tr.warnings.push_back(os.str());
  }
  if (out.status != Status::Converged) {
    tr.warnings.push_back(std::string("dual-anchor optimizer stopped with status ") +
                          to_string(out.status));
  }
  return {out, tr};
}

struct ParetoPoint {
  double lambda = 1.0;
  GammaHyperprior hyper;
  double d1 = 0.0;
  double dominance = 0.0;
  double achieved_mean_K = 0.0;
  double achieved_var_K = 0.0;
  std::optional<std::string> error;
};

inline std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

/// One independent penalized solve per λ, each started from the moment-matched fit.
inline std::vector<ParetoPoint> pareto_frontier(const ElicitationTarget& target,
                                                const DualAnchorConfig& config,
                                                std::vector<double> lambda_grid,
                                                const TsmmOptions& tsmm_opts = {}) {
  if (lambda_grid.empty()) throw InputError("pareto_frontier: lambda grid is empty");
  std::sort(lambda_grid.begin(), lambda_grid.end());
  for (double l : lambda_grid) {
    if (!(l > 0.0 && l <= 1.0)) {
      std::ostringstream os;
      os << "pareto_frontier: lambda values must lie in (0, 1], got " << l;
      throw InputError(os.str());
    }
  }
  TsmmOptions topts = tsmm_opts;
  topts.order = config.order;
  const auto base = tsmm_fit(target, topts);
  // Warm the shared caches before fanning out.
  stirling_table(target.J);
  cached_shape_direction_rule(base.hyper.a);

  std::vector<std::future<ParetoPoint>> jobs;
  jobs.reserve(lambda_grid.size());
  for (double l : lambda_grid) {
    jobs.push_back(std::async(std::launch::async, [&, l] {
      ParetoPoint p;
      p.lambda = l;
      try {
        DualAnchorConfig cfg = config;
        cfg.lambda = l;
        const auto sol = solve_penalized(target, base.hyper, cfg);
        p.hyper = sol.hyper;
        p.d1 = sol.objective.d1;
        p.dominance = sol.objective.dominance;
        p.achieved_mean_K = sol.objective.moments.mean;
        p.achieved_var_K = sol.objective.moments.variance;
      } catch (const std::exception& e) {
        p.hyper = base.hyper;
        p.error = e.what();
      }
      return p;
    }));
  }
  std::vector<ParetoPoint> out;
  out.reserve(jobs.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

/// Drop points that another point beats on both d1 and dominance (and failed points).
inline std::vector<ParetoPoint> pareto_filter(const std::vector<ParetoPoint>& points,
                                              double tol = 1e-9) {
  std::vector<ParetoPoint> kept;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].error) continue;
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
      if (i == j || points[j].error) continue;
      const bool no_worse = points[j].d1 <= points[i].d1 + tol &&
                            points[j].dominance <= points[i].dominance + tol;
      const bool better = points[j].d1 < points[i].d1 - tol ||
                          points[j].dominance < points[i].dominance - tol;
      dominated = no_worse && better;
    }
    if (!dominated) kept.push_back(points[i]);
  }
  return kept;
}

enum class TargetLabel { DoroUniform, ChisqDoro, Custom };

inline const char* to_string(TargetLabel l) {
  switch (l) {
    case TargetLabel::DoroUniform: return "doro_uniform";
    case TargetLabel::ChisqDoro: return "chisq_doro";
    case TargetLabel::Custom: return "custom";
  }
  return "?";
}

struct TargetPmf {
  int J = 0;
  std::vector<double> probabilities;
  TargetLabel label = TargetLabel::Custom;

  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) m += (k + 1.0) * probabilities[k];
    return m;
  }
  double variance() const {
    const double m = mean();
    double v = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) {
      v += (k + 1.0 - m) * (k + 1.0 - m) * probabilities[k];
    }
    return v;
  }
};

namespace detail {

inline void check_target_mean(int J, double mu_K, const char* fn) {
  if (J < 1 || !std::isfinite(mu_K) || mu_K < 1.0 || mu_K > J) {
    std::ostringstream os;
    os << fn << ": requires 1 <= mu_K <= J, got mu_K=" << mu_K << ", J=" << J;
    throw InputError(os.str());
  }
}

}  // namespace detail

/// Uniform mass on {1..m}, m = min(round(2μ_K − 1), J).
inline TargetPmf doro_uniform_target(int J, double mu_K) {
  detail::check_target_mean(J, mu_K, "doro_uniform_target");
  const int m = std::clamp(static_cast<int>(std::lround(2.0 * mu_K - 1.0)), 1, J);
  TargetPmf t;
  t.J = J;
  t.label = TargetLabel::DoroUniform;
  t.probabilities.assign(J, 0.0);
  for (int k = 0; k < m; ++k) t.probabilities[k] = 1.0 / m;
  return t;
}

/// χ²_ν density with ν = μ_K binned on half-integer edges: bin 1 = [0, 1.5], bin k = [k−½, k+½],
/// bin J absorbs [J−½, ∞).
inline TargetPmf chisq_doro_target(int J, double mu_K) {
  if (J < 1 || !std::isfinite(mu_K) || mu_K < 1.0) {
    std::ostringstream os;
    os << "chisq_doro_target: requires J >= 1 and mu_K >= 1, got mu_K=" << mu_K << ", J=" << J;
    throw InputError(os.str());
  }
  const double s = 0.5 * mu_K;
  auto upper_tail = [&](double x) { return regularized_upper_gamma(s, 0.5 * x); };
  TargetPmf t;
  t.J = J;
  t.label = TargetLabel::ChisqDoro;
  t.probabilities.assign(J, 0.0);
  double total = 0.0;
  for (int k = 1; k <= J; ++k) {
    const double lo = k == 1 ? 0.0 : k - 0.5;
    const double q_lo = upper_tail(lo);
    const double q_hi = k == J ? 0.0 : upper_tail(k + 0.5);
    t.probabilities[k - 1] = std::max(0.0, q_lo - q_hi);
    total += t.probabilities[k - 1];
  }
  if (!(total > 0.0)) throw CalibrationError("chisq_doro_target: all bins empty");
  for (double& p : t.probabilities) p /= total;
  return t;
}

struct KlOptions {
  int order = kDefaultQuadratureOrder;
  double a_min = 1e-6;
  double b_min = 1e-6;
  int max_evals = 500;
  double grad_tol = 1e-9;
  double obj_tol = 1e-14;
};

struct KlValue {
  double kl = 0.0;
  Eigen::Vector2d grad_eta = Eigen::Vector2d::Zero();
  std::vector<double> pmf;
};

/// D_KL(p★ ‖ p_{a,b}) and its gradient in (ln a, ln b); bins with p★(k) = 0 contribute nothing.
inline KlValue kl_objective(const TargetPmf& target, const GammaHyperprior& hyper, int order) {
  const auto mp = marginal_pmf_detailed(target.J, hyper, *stirling_table(target.J),
                                        *cached_rule(hyper.a, order), true);
  KlValue v;
  double ga = 0.0;
  double gb = 0.0;
  for (int k = 0; k < target.J; ++k) {
    const double ps = target.probabilities[k];
    if (ps <= 0.0) continue;
    if (mp.log_p[k] == kNegInf) {
      v.kl = std::numeric_limits<double>::infinity();
      return v;
    }
    v.kl += ps * (std::log(ps) - mp.log_p[k]);
    ga -= ps * mp.dlogp_da[k];
    gb -= ps * mp.dlogp_db[k];
  }
  v.grad_eta = Eigen::Vector2d(hyper.a * ga, hyper.b * gb);
  v.pmf = mp.p;
  return v;
}

/// Quasi-Newton minimization of the KL objective from `init`.
inline CalibrationResult kl_fit(int J, const TargetPmf& target, const GammaHyperprior& init,
                                const KlOptions& opts = {}) {
  if (target.J != J || static_cast<int>(target.probabilities.size()) != J) {
    throw InputError("kl_fit: target pmf length does not match J");
  }
  if (J < 2) throw InputError("kl_fit: J must be >= 2");
  init.validate();
  auto objective = [&](const Eigen::VectorXd& eta, Eigen::VectorXd& grad) {
    const auto v = kl_objective(target, {std::exp(eta(0)), std::exp(eta(1))}, opts.order);
    grad = v.grad_eta;
    return v.kl;
  };
  LbfgsOptions lo;
  lo.max_evals = opts.max_evals;
  lo.grad_tol = opts.grad_tol;
  lo.obj_tol = opts.obj_tol;
  Eigen::VectorXd lower(2);
  lower << std::log(opts.a_min), std::log(opts.b_min);
  Eigen::VectorXd x0(2);
  x0 << std::log(init.a), std::log(init.b);
  const auto res = minimize_lbfgs_box(objective, x0, lower, lo);

  CalibrationResult r;
  r.hyper = {std::exp(res.x(0)), std::exp(res.x(1))};
  r.target = {J, target.mean(), target.variance(), DirectVariance{target.variance()}};
  r.achieved = mixed_moments(J, r.hyper, opts.order);
  r.residual_inf_norm = moment_residual_inf(r.achieved, r.target);
  r.method = Method::A2_KL;
  r.iterations = res.iterations;
  r.status = status_from(res.termination);
  r.stage1_init = init;
  r.objective = res.f;
  return r;
}

}  // namespace dpcalib
