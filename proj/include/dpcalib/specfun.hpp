#pragma once

// Scalar special functions shared by the calibration modules. All functions are
// pure; NaN arguments are rejected with DomainError rather than propagated.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>

#include "dpcalib/error.hpp"

namespace dpcalib {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

inline void require_finite_positive(double x, const char* fn) {
  if (!std::isfinite(x) || x <= 0.0) {
    std::ostringstream os;
    os << fn << ": argument must be finite and > 0, got " << x;
    throw DomainError(os.str());
  }
}

inline void require_log_domain(double u, const char* fn) {
  if (std::isnan(u) || u == std::numeric_limits<double>::infinity()) {
    std::ostringstream os;
    os << fn << ": expected a finite value or -inf, got " << u;
    throw DomainError(os.str());
  }
}

}  // namespace detail

/// ln Γ(x) for x > 0.
inline double log_gamma(double x) {
  detail::require_finite_positive(x, "log_gamma");
  return std::lgamma(x);
}

/// Order of the polygamma function: 0 = digamma, 1 = trigamma, 2 = tetragamma.
enum class PolygammaOrder : int { Digamma = 0, Trigamma = 1, Tetragamma = 2 };

namespace detail {

// Recurrence shift target and asymptotic-series length.
inline constexpr double kPolygammaShift = 10.0;

inline double digamma_asymptotic(double x) {
  const double r = 1.0 / (x * x);
  // Bernoulli tail: 1/12, -1/120, 1/252, -1/240, 1/132, -691/32760, 1/12
  const double series =
      r * (1.0 / 12 -
           r * (1.0 / 120 -
                r * (1.0 / 252 -
                     r * (1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))));
  return std::log(x) - 0.5 / x - series;
}

inline double trigamma_asymptotic(double x) {
  const double r = 1.0 / (x * x);
  const double series =
      1.0 / 6 -
      r * (1.0 / 30 -
           r * (1.0 / 42 - r * (1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6))))));
  return 1.0 / x + 0.5 * r + series * r / x;
}

inline double tetragamma_asymptotic(double x) {
  const double r = 1.0 / (x * x);
  const double series =
      0.5 -
      r * (1.0 / 6 -
           r * (1.0 / 6 - r * (3.0 / 10 - r * (5.0 / 6 - r * (691.0 / 210 - r * (35.0 / 2))))));
  return -r - r / x - series * r * r;
}

}  // namespace detail

/// ψ, ψ₁ or ψ₂ at x > 0: upward recurrence to x >= 10, then a 7-term asymptotic series.
inline double polygamma(PolygammaOrder order, double x) {
  detail::require_finite_positive(x, "polygamma");
  double shift = 0.0;
  switch (order) {
    case PolygammaOrder::Digamma:
      while (x < detail::kPolygammaShift) {
        shift -= 1.0 / x;
        x += 1.0;
      }
      return shift + detail::digamma_asymptotic(x);
    case PolygammaOrder::Trigamma:
      while (x < detail::kPolygammaShift) {
        shift += 1.0 / (x * x);
        x += 1.0;
      }
      return shift + detail::trigamma_asymptotic(x);
    case PolygammaOrder::Tetragamma:
      while (x < detail::kPolygammaShift) {
        shift -= 2.0 / (x * x * x);
        x += 1.0;
      }
      return shift + detail::tetragamma_asymptotic(x);
  }
  throw DomainError("polygamma: order must be 0, 1 or 2");
}

inline double polygamma(int order, double x) {
  if (order < 0 || order > 2) throw DomainError("polygamma: order must be 0, 1 or 2");
  return polygamma(static_cast<PolygammaOrder>(order), x);
}

inline double digamma(double x) { return polygamma(PolygammaOrder::Digamma, x); }
inline double trigamma(double x) { return polygamma(PolygammaOrder::Trigamma, x); }
inline double tetragamma(double x) { return polygamma(PolygammaOrder::Tetragamma, x); }

/// ln(e^u + e^v); -inf is the identity element.
inline double log_add_exp(double u, double v) {
  detail::require_log_domain(u, "log_add_exp");
  detail::require_log_domain(v, "log_add_exp");
  if (u == kNegInf) return v;
  if (v == kNegInf) return u;
  const double hi = std::max(u, v);
  return hi + std::log1p(std::exp(-std::abs(u - v)));
}

/// ln Σ e^{v_i}. Throws on an empty sequence.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw DomainError("log_sum_exp: empty input");
  double hi = kNegInf;
  for (double v : values) {
    detail::require_log_domain(v, "log_sum_exp");
    hi = std::max(hi, v);
  }
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

namespace detail {

inline constexpr int kIncompleteGammaMaxIter = 500;
inline constexpr double kIncompleteGammaEps = 1e-16;

[[noreturn]] inline void incomplete_gamma_failure(const char* branch, double s, double x) {
  std::ostringstream os;
  os << "upper_incomplete_gamma: " << branch << " did not converge in " << kIncompleteGammaMaxIter
     << " iterations for s=" << s << ", x=" << x;
  throw ConvergenceError(os.str());
}

// Lower incomplete γ(s, x) for s > 0 by the power series.
inline double lower_gamma_series(double s, double x) {
  double term = 1.0 / s;
  double sum = term;
  double denom = s;
  for (int n = 1; n <= kIncompleteGammaMaxIter; ++n) {
    denom += 1.0;
    term *= x / denom;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kIncompleteGammaEps) {
      return sum * std::exp(-x + s * std::log(x));
    }
  }
  incomplete_gamma_failure("series", s, x);
}

// Modified Lentz evaluation of the continued fraction h with Γ(s, x) = x^s e^{-x} h;
// valid for any real s when x > 0.
inline double gamma_continued_fraction(double s, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - s;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kIncompleteGammaMaxIter; ++i) {
    const double an = -i * (i - s);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kIncompleteGammaEps) return h;
  }
  incomplete_gamma_failure("continued fraction", s, x);
}

inline double upper_gamma_continued_fraction(double s, double x) {
  return std::exp(-x + s * std::log(x)) * gamma_continued_fraction(s, x);
}

// Γ(s, x) = Γ(s) - Σ (-1)^n x^{s+n} / (n! (s+n)) for non-integer s <= 0 and small x.
inline double upper_gamma_negative_series(double s, double x) {
  double sum = 0.0;
  double pow_term = std::pow(x, s);  // x^{s+n} / n! * (-1)^n
  for (int n = 0; n <= kIncompleteGammaMaxIter; ++n) {
    if (n > 0) pow_term *= -x / n;
    const double term = pow_term / (s + n);
    sum += term;
    if (n > 2 && std::abs(term) < std::abs(sum) * kIncompleteGammaEps) {
      return std::tgamma(s) - sum;
    }
  }
  incomplete_gamma_failure("series", s, x);
}

// E1(x) = Γ(0, x) for 0 < x < 1.
inline double exponential_integral_series(double x) {
  double sum = 0.0;
  double term = 1.0;
  for (int n = 1; n <= kIncompleteGammaMaxIter; ++n) {
    term *= -x / n;
    const double add = term / n;
    sum += add;
    if (std::abs(add) < std::abs(sum) * kIncompleteGammaEps) {
      return -std::numbers::egamma - std::log(x) - sum;
    }
  }
  incomplete_gamma_failure("series", 0.0, x);
}

}  // namespace detail

/// Γ(s, x) = ∫_x^∞ t^{s-1} e^{-t} dt for x > 0 and any finite real s.
inline double upper_incomplete_gamma(double s, double x) {
  detail::require_finite_positive(x, "upper_incomplete_gamma");
  if (!std::isfinite(s)) throw DomainError("upper_incomplete_gamma: s must be finite");
  if (s > 0.0) {
    if (x < s + 1.0) return std::tgamma(s) - detail::lower_gamma_series(s, x);
    return detail::upper_gamma_continued_fraction(s, x);
  }
  if (x >= 1.0) return detail::upper_gamma_continued_fraction(s, x);
  const double rounded = std::round(s);
  if (s != rounded) return detail::upper_gamma_negative_series(s, x);
  // Non-positive integer: start from E1 and recur downward in s.
  double value = detail::exponential_integral_series(x);
  const double ex = std::exp(-x);
  for (int n = 1; n <= static_cast<int>(-rounded); ++n) {
    value = (std::pow(x, -n) * ex - value) / n;
  }
  return value;
}

/// Regularized Q(s, x) = Γ(s, x) / Γ(s) for s > 0, x >= 0, evaluated with log-space prefactors
/// so that large s does not overflow.
inline double regularized_upper_gamma(double s, double x) {
  detail::require_finite_positive(s, "regularized_upper_gamma");
  if (std::isnan(x) || x < 0.0) throw DomainError("regularized_upper_gamma: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double log_prefix = -x + s * std::log(x) - std::lgamma(s);
  if (x < s + 1.0) {
    double term = 1.0 / s;
    double sum = term;
    double denom = s;
    for (int n = 1; n <= detail::kIncompleteGammaMaxIter; ++n) {
      denom += 1.0;
      term *= x / denom;
      sum += term;
      if (std::abs(term) < std::abs(sum) * detail::kIncompleteGammaEps) {
        return std::max(0.0, 1.0 - sum * std::exp(log_prefix));
      }
    }
    detail::incomplete_gamma_failure("series", s, x);
  }
  return std::exp(log_prefix) * detail::gamma_continued_fraction(s, x);
}

/// Standard-normal quantile z_p for p in (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    std::ostringstream os;
    os << "normal_quantile: p must lie in (0, 1), got " << p;
    throw DomainError(os.str());
  }
  // Acklam's rational approximation followed by one Halley refinement step.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double z;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    z = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    z = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-z / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * z * z);
  return z - u / (1.0 + 0.5 * z * u);
}

}  // namespace dpcalib
