#pragma once

// Error bounds for the shifted Poisson proxy K_J − 1 ≈ Poisson(α ln J) behind the Stage-1 map.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dpcalib/exact_core.hpp"
#include "dpcalib/quadrature.hpp"
#include "dpcalib/specfun.hpp"
#include "dpcalib/types.hpp"

namespace dpcalib {

struct ConditionalBoundReport {
  double alpha = 0.0;
  double lambda_J = 0.0;       // E[K_J − 1 | α]
  double e1_bound = 0.0;       // Poisson-binomial vs Poisson(λ_J)
  double e2_bound = 0.0;       // Poisson(λ_J) vs Poisson(α ln J)
  double kl_poisson = 0.0;
  double sum_p_squared = 0.0;  // Σ p_r², equal to λ_J − Var(K_J | α)
  double linearization_centered = 0.0;
  double linearization_uncentered = 0.0;
};

inline ConditionalBoundReport conditional_bounds(int J, double alpha) {
  if (J < 2) {
    std::ostringstream os;
    os << "conditional_bounds: J must be >= 2, got " << J;
    throw DomainError(os.str());
  }
  detail::check_design(J, alpha, "conditional_bounds");

  ConditionalBoundReport r;
  r.alpha = alpha;
  if (J <= kSummationMaxJ) {
    for (int i = 1; i < J; ++i) {
      const double p = alpha / (alpha + i);
      r.lambda_J += p;
      r.sum_p_squared += p * p;
    }
  } else {
    r.lambda_J = alpha * (digamma(alpha + J) - digamma(alpha + 1.0));
    r.sum_p_squared = alpha * alpha * (trigamma(alpha + 1.0) - trigamma(alpha + J));
  }
  r.e1_bound = std::min(1.0, 1.0 / r.lambda_J) * r.sum_p_squared;

  const double lam = r.lambda_J;
  const double lam_proxy = alpha * std::log(static_cast<double>(J));
  r.kl_poisson = std::max(0.0, lam * std::log(lam / lam_proxy) + lam_proxy - lam);
  r.e2_bound = std::min(1.0, std::sqrt(0.5 * r.kl_poisson));

  const double jd = static_cast<double>(J);
  r.linearization_centered = alpha * alpha / jd + alpha / (2.0 * jd) + alpha / (12.0 * jd * jd);
  r.linearization_uncentered =
      alpha * std::abs(digamma(alpha + 1.0)) + r.linearization_centered;
  return r;
}

/// Regime label for how far the Stage-1 map can be trusted at design size J.
inline std::string stage1_guidance(int J) {
  if (J >= 100) return "A1 acceptable as initializer";
  if (J >= 30) return "A1 + A2 recommended";
  if (J >= 10) return "A2 essential";
  return "prefer exact enumeration / A2-KL";
}

struct MarginalBoundReport {
  int J = 0;
  GammaHyperprior hyper;
  double mixed_e1 = 0.0;
  double mixed_e2 = 0.0;
  double total_tv_bound = 0.0;
  double e_sqrt_alpha = 0.0;
  // Worst-case moment discrepancies implied by the TV bound (clamped to 1).
  double mean_coupling_bound = 0.0;
  double variance_coupling_bound = 0.0;
  std::string guidance;
};

/// E[√α] = Γ(a + 1/2) / (Γ(a) √b).
inline double expected_sqrt_alpha(const GammaHyperprior& hyper) {
  hyper.validate();
  return std::exp(log_gamma(hyper.a + 0.5) - log_gamma(hyper.a)) / std::sqrt(hyper.b);
}

inline MarginalBoundReport marginal_bounds(int J, const GammaHyperprior& hyper,
                                           const QuadratureRule& rule) {
  detail::check_mixed_design(J);
  MarginalBoundReport r;
  r.J = J;
  r.hyper = hyper;
  r.mixed_e1 = gamma_expectation(
      [J](double alpha) { return conditional_bounds(J, alpha).e1_bound; }, hyper, rule);
  r.mixed_e2 = gamma_expectation(
      [J](double alpha) { return conditional_bounds(J, alpha).e2_bound; }, hyper, rule);
  r.total_tv_bound = r.mixed_e1 + r.mixed_e2;
  r.e_sqrt_alpha = expected_sqrt_alpha(hyper);
  const double tv = std::min(1.0, r.total_tv_bound);
  const double jd = static_cast<double>(J);
  r.mean_coupling_bound = 2.0 * jd * tv;
  r.variance_coupling_bound = 4.0 * jd * jd * tv;
  r.guidance = stage1_guidance(J);
  return r;
}

inline MarginalBoundReport marginal_bounds(int J, const GammaHyperprior& hyper,
                                           int order = kDefaultQuadratureOrder) {
  hyper.validate();
  return marginal_bounds(J, hyper, *cached_rule(hyper.a, order));
}

/// Exact TV distance between K_J − 1 given α and Poisson(α ln J) restricted to 0..J−1 and
/// renormalized.
inline double proxy_tv_distance(int J, double alpha) {
  const auto exact = antoniak_pmf(J, alpha);
  const double lam = alpha * std::log(static_cast<double>(J));
  std::vector<double> log_pois(static_cast<std::size_t>(J));
  for (int s = 0; s < J; ++s) log_pois[s] = s * std::log(lam) - lam - log_gamma(s + 1.0);
  const double log_z = log_sum_exp(log_pois);
  double tv = 0.0;
  for (int s = 0; s < J; ++s) tv += std::abs(exact[s] - std::exp(log_pois[s] - log_z));
  return 0.5 * tv;
}

}  // namespace dpcalib
