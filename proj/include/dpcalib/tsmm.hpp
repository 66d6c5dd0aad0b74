#pragma once

// Two-stage moment matching: elicitation resolution, feasibility screening, the closed-form
// Stage-1 map and the exact-moment Newton refinement in log-parameters.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "dpcalib/error.hpp"
#include "dpcalib/quadrature.hpp"
#include "dpcalib/specfun.hpp"
#include "dpcalib/types.hpp"

namespace dpcalib {

enum class Confidence { High, Medium, Low };

inline double variance_inflation_factor(Confidence c) {
  switch (c) {
    case Confidence::High: return 1.5;
    case Confidence::Medium: return 2.5;
    case Confidence::Low: return 5.0;
  }
  return 2.5;
}

inline const char* to_string(Confidence c) {
  switch (c) {
    case Confidence::High: return "high";
    case Confidence::Medium: return "medium";
    case Confidence::Low: return "low";
  }
  return "medium";
}

inline std::optional<Confidence> parse_confidence(const std::string& s) {
  if (s == "high") return Confidence::High;
  if (s == "medium") return Confidence::Medium;
  if (s == "low") return Confidence::Low;
  return std::nullopt;
}

struct DirectVariance {
  double var_K = 0.0;
};
struct VifSource {
  Confidence level = Confidence::Medium;
};
struct CvSource {
  double cv = 0.0;
};
struct IntervalSource {
  double k_lo = 1.0;
  double k_hi = 1.0;
  double coverage = 0.9;
};

using UncertaintySource = std::variant<DirectVariance, VifSource, CvSource, IntervalSource>;

/// Design size J with target mean and variance of K_J, plus how the variance was elicited.
struct ElicitationTarget {
  int J = 0;
  double mu_K = 1.0;
  double var_K = 0.0;
  UncertaintySource source = DirectVariance{};
};

/// Short label for the provenance of var_K ("direct", "vif:medium", "cv", "interval").
inline std::string source_label(const UncertaintySource& src) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, DirectVariance>) return "direct";
        else if constexpr (std::is_same_v<T, VifSource>) return std::string("vif:") + to_string(s.level);
        else if constexpr (std::is_same_v<T, CvSource>) return "cv";
        else return "interval";
      },
      src);
}

inline ElicitationTarget resolve_target(int J, double mu_K, const UncertaintySource& source) {
  if (J < 2) {
    std::ostringstream os;
    os << "J must be >= 2, got " << J;
    throw InputError(os.str());
  }
  if (!std::isfinite(mu_K) || mu_K < 1.0 || mu_K > J) {
    std::ostringstream os;
    os << "mu_K must satisfy 1 <= mu_K <= J = " << J << ", got " << mu_K;
    throw InputError(os.str());
  }
  ElicitationTarget t{J, mu_K, 0.0, source};
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, DirectVariance>) {
          if (!std::isfinite(s.var_K)) throw InputError("var_K must be finite");
          t.var_K = s.var_K;
        } else if constexpr (std::is_same_v<T, VifSource>) {
          t.var_K = variance_inflation_factor(s.level) * (mu_K - 1.0);
        } else if constexpr (std::is_same_v<T, CvSource>) {
          if (!std::isfinite(s.cv) || s.cv <= 0.0) {
            std::ostringstream os;
            os << "cv must be > 0, got " << s.cv;
            throw InputError(os.str());
          }
          t.var_K = (s.cv * mu_K) * (s.cv * mu_K);
        } else {
          if (!(std::isfinite(s.k_lo) && std::isfinite(s.k_hi) && 1.0 <= s.k_lo && s.k_lo < s.k_hi &&
                s.k_hi <= J)) {
            std::ostringstream os;
            os << "interval must satisfy 1 <= lo < hi <= J = " << J << ", got [" << s.k_lo << ", "
               << s.k_hi << "]";
            throw InputError(os.str());
          }
          if (!(s.coverage > 0.0 && s.coverage < 1.0)) {
            std::ostringstream os;
            os << "interval coverage must lie in (0, 1), got " << s.coverage;
            throw InputError(os.str());
          }
          const double z = normal_quantile(0.5 * (1.0 + s.coverage));
          const double sd = (s.k_hi - s.k_lo) / (2.0 * z);
          t.var_K = sd * sd;
        }
      },
      source);
  return t;
}

struct Feasibility {
  bool stage1_feasible = true;  // σ_K² > μ_K − 1
  bool projection_required = false;
};

/// Hard-rejects targets outside 1 <= μ_K <= J or 0 <= σ_K² <= (J−1)²/4.
inline Feasibility feasibility_check(const ElicitationTarget& t) {
  if (t.J < 2) {
    std::ostringstream os;
    os << "infeasible target: J must be >= 2, got " << t.J;
    throw InputError(os.str());
  }
  if (!std::isfinite(t.mu_K) || t.mu_K < 1.0 || t.mu_K > t.J) {
    std::ostringstream os;
    os << "infeasible target: requires 1 <= mu_K <= J, got mu_K=" << t.mu_K << " with J=" << t.J;
    throw InputError(os.str());
  }
  const double upper = (t.J - 1.0) * (t.J - 1.0) / 4.0;
  if (!std::isfinite(t.var_K) || t.var_K < 0.0 || t.var_K > upper) {
    std::ostringstream os;
    os << "infeasible target: requires 0 <= var_K <= (J-1)^2/4 = " << upper
       << " (variance bound for a count on {1..J}), got var_K=" << t.var_K;
    throw InputError(os.str());
  }
  Feasibility f;
  f.stage1_feasible = t.var_K > t.mu_K - 1.0;
  f.projection_required = !f.stage1_feasible;
  return f;
}

enum class Stage1Scaling { LogJ, Harmonic };

inline double stage1_scale(int J, Stage1Scaling scaling) {
  if (scaling == Stage1Scaling::LogJ) return std::log(static_cast<double>(J));
  double h = 0.0;
  for (int r = 1; r < J; ++r) h += 1.0 / r;
  return h;
}

/// Closed-form negative-binomial-proxy map, with minimal variance inflation when σ_K² <= μ_K − 1.
inline GammaHyperprior stage1_init(const ElicitationTarget& t,
                                   Stage1Scaling scaling = Stage1Scaling::LogJ) {
  feasibility_check(t);
  const double mu0 = t.mu_K - 1.0;
  if (!(mu0 > 0.0)) {
    throw InputError("stage-1 map requires mu_K > 1 (the shifted mean mu_K - 1 must be positive)");
  }
  const double eps = std::max(1e-8, 1e-6 * mu0);
  const double var_eff = std::max(t.var_K, mu0 + eps);
  const double excess = var_eff - mu0;
  const double cj = stage1_scale(t.J, scaling);
  return {mu0 * mu0 / excess, mu0 * cj / excess};
}

enum class Method { A1, A2_MN, A2_KL, DualAnchor };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::A1: return "A1";
    case Method::A2_MN: return "A2-MN";
    case Method::A2_KL: return "A2-KL";
    case Method::DualAnchor: return "DualAnchor";
  }
  return "?";
}

enum class Status { Converged, ProjectedThenConverged, MaxIter, LineSearchStall, Stage1Only };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::ProjectedThenConverged: return "projected_then_converged";
    case Status::MaxIter: return "max_iter";
    case Status::LineSearchStall: return "line_search_stall";
    case Status::Stage1Only: return "stage1_only";
  }
  return "?";
}

inline bool is_converged(Status s) {
  return s == Status::Converged || s == Status::ProjectedThenConverged;
}

struct CalibrationResult {
  GammaHyperprior hyper;
  ElicitationTarget target;
  MixedMoments achieved;
  double residual_inf_norm = 0.0;
  Method method = Method::A2_MN;
  int iterations = 0;
  Status status = Status::Converged;
  GammaHyperprior stage1_init;
  bool projection_applied = false;
  std::optional<double> objective;  // KL divergence for A2-KL, L_λ for Dual-Anchor
};

struct TsmmOptions {
  int order = kDefaultQuadratureOrder;
  double tol_F = 1e-8;
  double tol_eta = 1e-10;
  int max_iter = 20;
  double armijo_c = 0.5;
  double min_lambda = 1e-8;
  double det_floor = 1e-12;
  double ridge = 1e-8;
  double eta_floor = std::log(1e-6);
  double eta_ceiling = std::log(1e8);
  Stage1Scaling scaling = Stage1Scaling::LogJ;
};

inline double moment_residual_inf(const MixedMoments& m, const ElicitationTarget& t) {
  return std::max(std::abs(m.mean - t.mu_K), std::abs(m.variance - t.var_K));
}

/// Stage-1 only: the closed-form initializer with its exact induced moments.
inline CalibrationResult stage1_fit(const ElicitationTarget& t, const TsmmOptions& opts = {}) {
  const Feasibility feas = feasibility_check(t);
  CalibrationResult r;
  r.target = t;
  r.stage1_init = stage1_init(t, opts.scaling);
  r.hyper = r.stage1_init;
  r.achieved = mixed_moments(t.J, r.hyper, opts.order);
  r.residual_inf_norm = moment_residual_inf(r.achieved, t);
  r.method = Method::A1;
  r.iterations = 0;
  r.status = Status::Stage1Only;
  r.projection_applied = feas.projection_required;
  return r;
}

/// Stage-1 initializer followed by damped Newton on F(a, b) = (E[K_J] − μ_K, Var(K_J) − σ_K²)
/// in η = (ln a, ln b).
inline CalibrationResult tsmm_fit(const ElicitationTarget& t, const TsmmOptions& opts = {}) {
  const Feasibility feas = feasibility_check(t);
  CalibrationResult r;
  r.target = t;
  r.method = Method::A2_MN;
  r.projection_applied = feas.projection_required;
  r.stage1_init = stage1_init(t, opts.scaling);

  auto clamp_eta = [&](Eigen::Vector2d eta) {
    eta(0) = std::clamp(eta(0), opts.eta_floor, opts.eta_ceiling);
    eta(1) = std::clamp(eta(1), opts.eta_floor, opts.eta_ceiling);
    return eta;
  };
  auto hyper_of = [](const Eigen::Vector2d& eta) {
    return GammaHyperprior{std::exp(eta(0)), std::exp(eta(1))};
  };
  auto residual_of = [&](const MixedMoments& m) {
    return Eigen::Vector2d(m.mean - t.mu_K, m.variance - t.var_K);
  };

  Eigen::Vector2d eta = clamp_eta({std::log(r.stage1_init.a), std::log(r.stage1_init.b)});
  GammaHyperprior hyper = hyper_of(eta);
  auto state = moments_and_jacobian(t.J, hyper, *cached_rule(hyper.a, opts.order));
  Eigen::Vector2d f = residual_of(state.moments);

  Eigen::Vector2d best_eta = eta;
  MixedMoments best_moments = state.moments;
  double best_norm = f.norm();

  Status status = Status::MaxIter;
  int iter = 0;
  for (;;) {
    if (f.lpNorm<Eigen::Infinity>() <= opts.tol_F) {
      status = Status::Converged;
      break;
    }
    if (iter >= opts.max_iter) {
      status = Status::MaxIter;
      break;
    }
    const auto& jf = state.jacobian;
    Eigen::Matrix2d jg;
    jg << jf.dmean_da * hyper.a, jf.dmean_db * hyper.b, jf.dvar_da * hyper.a, jf.dvar_db * hyper.b;
    if (std::abs(jg.determinant()) < opts.det_floor) jg += opts.ridge * Eigen::Matrix2d::Identity();
    const Eigen::Vector2d step = -jg.partialPivLu().solve(f);
    if (!step.allFinite()) {
      status = Status::LineSearchStall;
      break;
    }

    const double norm0 = f.norm();
    double lambda = 1.0;
    bool accepted = false;
    Eigen::Vector2d cand_eta;
    MixedMoments cand_moments;
    while (lambda >= opts.min_lambda) {
      cand_eta = clamp_eta(eta + lambda * step);
      const GammaHyperprior h = hyper_of(cand_eta);
      cand_moments = mixed_moments(t.J, h, *cached_rule(h.a, opts.order));
      if (residual_of(cand_moments).norm() <= (1.0 - opts.armijo_c * lambda) * norm0) {
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) {
      status = Status::LineSearchStall;
      break;
    }
    ++iter;
    const double eta_change = (cand_eta - eta).lpNorm<Eigen::Infinity>();
    eta = cand_eta;
    hyper = hyper_of(eta);
    f = residual_of(cand_moments);
    if (f.norm() < best_norm) {
      best_norm = f.norm();
      best_eta = eta;
      best_moments = cand_moments;
    }
    if (f.lpNorm<Eigen::Infinity>() <= opts.tol_F) {
      status = Status::Converged;
      break;
    }
    if (eta_change < opts.tol_eta) {
      status = Status::LineSearchStall;
      break;
    }
    state = moments_and_jacobian(t.J, hyper, *cached_rule(hyper.a, opts.order));
  }

  r.hyper = hyper_of(best_eta);
  r.achieved = best_moments;
  r.residual_inf_norm = moment_residual_inf(best_moments, t);
  r.iterations = iter;
  if (status == Status::Converged && r.residual_inf_norm > opts.tol_F) status = Status::LineSearchStall;
  if (status == Status::Converged && feas.projection_required) status = Status::ProjectedThenConverged;
  r.status = status;
  return r;
}

}  // namespace dpcalib
