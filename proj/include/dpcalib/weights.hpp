#pragma once

// Stick-breaking weight diagnostics under α ~ Gamma(a, b): the first size-biased weight w1,
// the co-clustering index ρ = Σ w_h², and the composite diagnostics report.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "dpcalib/error.hpp"
#include "dpcalib/quadrature.hpp"
#include "dpcalib/types.hpp"

namespace dpcalib {

namespace detail {

inline void check_open_unit(double x, const char* fn, const char* name) {
  if (!(x > 0.0 && x < 1.0)) {
    std::ostringstream os;
    os << fn << ": " << name << " must lie in (0, 1), got " << x;
    throw DomainError(os.str());
  }
}

}  // namespace detail

/// Pr(w1 > t) with its gradient in (a, b).
struct W1TailSummary {
  double threshold = 0.5;
  double probability = 0.0;
  double grad_a = 0.0;
  double grad_b = 0.0;
};

inline W1TailSummary w1_survival(double t, const GammaHyperprior& hyper) {
  detail::check_open_unit(t, "w1_survival", "threshold");
  hyper.validate();
  const double c = -std::log1p(-t);
  const double log_ratio = std::log(hyper.b) - std::log(hyper.b + c);
  W1TailSummary s;
  s.threshold = t;
  s.probability = std::exp(hyper.a * log_ratio);
  s.grad_a = s.probability * log_ratio;
  s.grad_b = s.probability * hyper.a * c / (hyper.b * (hyper.b + c));
  return s;
}

inline double w1_density(double x, const GammaHyperprior& hyper) {
  detail::check_open_unit(x, "w1_density", "x");
  hyper.validate();
  const double c = -std::log1p(-x);
  const double log_f = std::log(hyper.a) + hyper.a * std::log(hyper.b) - std::log1p(-x) -
                       (hyper.a + 1.0) * std::log(hyper.b + c);
  return std::exp(log_f);
}

inline double w1_cdf(double x, const GammaHyperprior& hyper) {
  detail::check_open_unit(x, "w1_cdf", "x");
  return 1.0 - w1_survival(x, hyper).probability;
}

inline double w1_quantile(double u, const GammaHyperprior& hyper) {
  detail::check_open_unit(u, "w1_quantile", "u");
  hyper.validate();
  // 1 − exp(b[1 − (1−u)^{−1/a}])
  const double growth = std::expm1(-std::log1p(-u) / hyper.a);
  return -std::expm1(-hyper.b * growth);
}

namespace detail {

// I_c = E[1 / (α + c)] under the Gamma mixture.
inline double inverse_shift_moment(double c, const GammaHyperprior& hyper,
                                   const QuadratureRule& rule) {
  return gamma_expectation([c](double alpha) { return 1.0 / (alpha + c); }, hyper, rule);
}

}  // namespace detail

/// E[w1] = E[1/(1+α)].
inline double w1_mean(const GammaHyperprior& hyper, const QuadratureRule& rule) {
  return detail::inverse_shift_moment(1.0, hyper, rule);
}

struct RhoMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of ρ from E[ρ|α] = 1/(1+α) and E[ρ²|α] = (α+6)/((α+1)(α+2)(α+3)).
inline RhoMoments rho_moments(const GammaHyperprior& hyper, const QuadratureRule& rule) {
  const double i1 = detail::inverse_shift_moment(1.0, hyper, rule);
  const double i2 = detail::inverse_shift_moment(2.0, hyper, rule);
  const double i3 = detail::inverse_shift_moment(3.0, hyper, rule);
  const double second = 2.5 * i1 - 4.0 * i2 + 1.5 * i3;
  double var = second - i1 * i1;
  if (var < -1e-10) {
    std::ostringstream os;
    os << "rho_moments: negative variance " << var << " at Gamma(" << hyper.a << ", " << hyper.b
       << ")";
    throw CalibrationError(os.str());
  }
  if (var < 0.0) var = 0.0;
  return {i1, var};
}

enum class RiskLevel { Low, Moderate, Substantial, High };

inline const char* to_string(RiskLevel r) {
  switch (r) {
    case RiskLevel::Low: return "Low";
    case RiskLevel::Moderate: return "Moderate";
    case RiskLevel::Substantial: return "Substantial";
    case RiskLevel::High: return "High";
  }
  return "?";
}

/// Bands on Pr(w1 > 0.5): [0, 0.20) Low, [0.20, 0.40) Moderate, [0.40, 0.60) Substantial, else High.
inline RiskLevel classify_risk(double p_dom) {
  if (p_dom < 0.20) return RiskLevel::Low;
  if (p_dom < 0.40) return RiskLevel::Moderate;
  if (p_dom < 0.60) return RiskLevel::Substantial;
  return RiskLevel::High;
}

inline constexpr double kDominanceTrigger = 0.40;

struct KSummary {
  double mean = 0.0;
  double variance = 0.0;
  int mode = 1;
  int median = 1;
  int q05 = 1;
  int q10 = 1;
  int q90 = 1;
  int q95 = 1;
};

/// Smallest k in 1..J whose CDF reaches p.
inline int pmf_quantile(const std::vector<double>& pmf, double p) {
  double cdf = 0.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    cdf += pmf[k];
    if (cdf >= p - 1e-12) return static_cast<int>(k) + 1;
  }
  return static_cast<int>(pmf.size());
}

inline KSummary summarize_pmf(const std::vector<double>& pmf) {
  KSummary s;
  double best = -1.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    const double kk = static_cast<double>(k + 1);
    s.mean += kk * pmf[k];
    if (pmf[k] > best) {
      best = pmf[k];
      s.mode = static_cast<int>(k) + 1;
    }
  }
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    const double d = static_cast<double>(k + 1) - s.mean;
    s.variance += d * d * pmf[k];
  }
  s.median = pmf_quantile(pmf, 0.5);
  s.q05 = pmf_quantile(pmf, 0.05);
  s.q10 = pmf_quantile(pmf, 0.10);
  s.q90 = pmf_quantile(pmf, 0.90);
  s.q95 = pmf_quantile(pmf, 0.95);
  return s;
}

struct DiagnosticsReport {
  int J = 0;
  GammaHyperprior hyper;
  KSummary k_summary;
  W1TailSummary w1_tail_50;
  W1TailSummary w1_tail_90;
  double w1_mean = 0.0;
  double rho_mean = 0.0;
  double rho_var = 0.0;
  RiskLevel risk_level = RiskLevel::Low;
  std::vector<std::string> warnings;
};

inline DiagnosticsReport diagnostics(int J, const GammaHyperprior& hyper,
                                     int order = kDefaultQuadratureOrder) {
  if (J < 2) {
    std::ostringstream os;
    os << "diagnostics: J must be >= 2, got " << J;
    throw DomainError(os.str());
  }
  hyper.validate();
  const auto rule = cached_rule(hyper.a, order);
  DiagnosticsReport d;
  d.J = J;
  d.hyper = hyper;
  d.k_summary = summarize_pmf(marginal_pmf(J, hyper, *stirling_table(J), *rule));
  d.w1_tail_50 = w1_survival(0.5, hyper);
  d.w1_tail_90 = w1_survival(0.9, hyper);
  const auto rho = rho_moments(hyper, *rule);
  d.w1_mean = rho.mean;
  d.rho_mean = rho.mean;
  d.rho_var = rho.variance;
  d.risk_level = classify_risk(d.w1_tail_50.probability);
  if (d.w1_tail_50.probability > kDominanceTrigger) {
    std::ostringstream os;
    os.precision(3);
    os << "dominance: Pr(w1 > 0.5) = " << d.w1_tail_50.probability
       << " exceeds 0.40; a single cluster is likely to absorb most units. Consider Dual-Anchor "
          "refinement.";
    d.warnings.push_back(os.str());
  }
  return d;
}

}  // namespace dpcalib
