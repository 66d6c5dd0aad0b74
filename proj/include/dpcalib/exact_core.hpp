#pragma once

// Exact finite-J law of the occupied-cluster count K_J given the concentration α.

#include <cmath>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "dpcalib/error.hpp"
#include "dpcalib/specfun.hpp"

namespace dpcalib {

inline constexpr int kDefaultStirlingCap = 2000;

/// Upper limit on J for Stirling tables; DPCALIB_STIRLING_CAP overrides the default.
inline int stirling_cap() {
  if (const char* env = std::getenv("DPCALIB_STIRLING_CAP")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1000000) return static_cast<int>(v);
  }
  return kDefaultStirlingCap;
}

/// Triangular table L[n][k] = ln |s(n, k)| for 1 <= k <= n <= j_max.
class LogStirlingTable {
 public:
  explicit LogStirlingTable(int j_max) : j_max_(j_max) {
    if (j_max < 1) throw DomainError("LogStirlingTable: j_max must be >= 1");
    values_.assign(offset(j_max + 1), kNegInf);
    at(1, 1) = 0.0;
    for (int n = 2; n <= j_max; ++n) {
      const double log_nm1 = std::log(static_cast<double>(n - 1));
      at(n, 1) = log_nm1 + at(n - 1, 1);
      for (int k = 2; k < n; ++k) {
        at(n, k) = log_add_exp(at(n - 1, k - 1), log_nm1 + at(n - 1, k));
      }
      at(n, n) = 0.0;
    }
  }

  int j_max() const { return j_max_; }

  double operator()(int n, int k) const {
    if (n < 1 || n > j_max_) {
      std::ostringstream os;
      os << "LogStirlingTable: row " << n << " outside [1, " << j_max_ << "]";
      throw DomainError(os.str());
    }
    if (k < 1 || k > n) return kNegInf;
    return values_[offset(n) + static_cast<std::size_t>(k - 1)];
  }

  /// Pointer to the n entries of row n (k = 1..n).
  const double* row(int n) const { return values_.data() + offset(n); }

 private:
  static std::size_t offset(int n) {
    const auto m = static_cast<std::size_t>(n - 1);
    return m * (m + 1) / 2;
  }
  double& at(int n, int k) { return values_[offset(n) + static_cast<std::size_t>(k - 1)]; }

  int j_max_;
  std::vector<double> values_;
};

/// Build a table up to j_max, enforcing the configured cap.
inline LogStirlingTable build_log_stirling(int j_max) {
  const int cap = stirling_cap();
  if (j_max < 1 || j_max > cap) {
    std::ostringstream os;
    os << "build_log_stirling: j_max=" << j_max << " outside [1, " << cap
       << "] (raise DPCALIB_STIRLING_CAP to allow larger designs)";
    throw DomainError(os.str());
  }
  return LogStirlingTable(j_max);
}

/// Process-wide memoized table covering at least row j. Grows by rebuilding; old
/// tables stay alive for as long as callers hold them.
inline std::shared_ptr<const LogStirlingTable> stirling_table(int j) {
  static std::mutex mutex;
  static std::shared_ptr<const LogStirlingTable> cached;
  std::lock_guard<std::mutex> lock(mutex);
  if (!cached || cached->j_max() < j) {
    cached = std::make_shared<const LogStirlingTable>(build_log_stirling(j));
  }
  return cached;
}

namespace detail {

inline void check_design(int J, double alpha, const char* fn) {
  if (J < 1) {
    std::ostringstream os;
    os << fn << ": J must be >= 1, got " << J;
    throw DomainError(os.str());
  }
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    std::ostringstream os;
    os << fn << ": alpha must be finite and > 0, got " << alpha;
    throw DomainError(os.str());
  }
}

}  // namespace detail

/// ln Pr(K_J = k | α) for k = 1..J, stored at index k-1 and normalized by log_sum_exp.
inline std::vector<double> antoniak_log_pmf(int J, double alpha, const LogStirlingTable& table) {
  detail::check_design(J, alpha, "antoniak_pmf");
  if (J > table.j_max()) {
    std::ostringstream os;
    os << "antoniak_pmf: J=" << J << " exceeds table size " << table.j_max();
    throw DomainError(os.str());
  }
  if (J == 1) return {0.0};

  const double log_alpha = std::log(alpha);
  double log_rising = 0.0;  // ln α^{(J)} = Σ_{r<J} ln(α + r)
  for (int r = 0; r < J; ++r) log_rising += std::log(alpha + r);

  std::vector<double> logp(static_cast<std::size_t>(J));
  const double* row = table.row(J);
  for (int k = 1; k <= J; ++k) logp[k - 1] = row[k - 1] + k * log_alpha - log_rising;

  const double log_z = log_sum_exp(logp);
  if (std::abs(log_z) > 1e-8) {
    std::ostringstream os;
    os << "antoniak_pmf: raw log-normalizer " << log_z << " at J=" << J << ", alpha=" << alpha;
    throw CalibrationError(os.str());
  }
  for (double& v : logp) v -= log_z;
  return logp;
}

/// Pr(K_J = k | α) for k = 1..J, stored at index k-1.
inline std::vector<double> antoniak_pmf(int J, double alpha, const LogStirlingTable& table) {
  std::vector<double> p = antoniak_log_pmf(J, alpha, table);
  for (double& v : p) v = std::exp(v);
  return p;
}

inline std::vector<double> antoniak_pmf(int J, double alpha) {
  return antoniak_pmf(J, alpha, *stirling_table(J));
}

/// E[K_J | α], Var(K_J | α) and their α-derivatives.
struct ConditionalMoments {
  double mean = 1.0;
  double variance = 0.0;
  double d_mean = 0.0;
  double d_variance = 0.0;
};

/// Designs up to this size use the Bernoulli-sum forms.
inline constexpr int kSummationMaxJ = 64;

/// Moments from the independent-indicator representation K_J = 1 + Σ Bernoulli(α/(α+r)).
inline ConditionalMoments conditional_moments_summation(int J, double alpha) {
  detail::check_design(J, alpha, "conditional_moments");
  ConditionalMoments m;
  for (int r = 1; r < J; ++r) {
    const double s = alpha + r;
    const double s2 = s * s;
    m.mean += alpha / s;
    m.variance += alpha * r / s2;
    m.d_mean += r / s2;
    m.d_variance += r * (r - alpha) / (s2 * s);
  }
  return m;
}

/// Same quantities in O(1) through polygamma differences.
inline ConditionalMoments conditional_moments_polygamma(int J, double alpha) {
  detail::check_design(J, alpha, "conditional_moments");
  if (J == 1) return {};
  const double x0 = alpha + 1.0;
  const double x1 = alpha + J;
  const double d0 = digamma(x1) - digamma(x0);
  const double d1 = trigamma(x0) - trigamma(x1);
  const double d2 = tetragamma(x0) - tetragamma(x1);
  const double a2 = alpha * alpha;

  ConditionalMoments m;
  const double lambda = alpha * d0;
  m.mean = 1.0 + lambda;
  m.variance = lambda - a2 * d1;
  m.d_mean = d0 - alpha * d1;
  m.d_variance = m.d_mean - 2.0 * alpha * d1 - a2 * d2;
  return m;
}

inline double d_variance_summation(int J, double alpha) {
  return conditional_moments_summation(J, alpha).d_variance;
}

inline double d_variance_polygamma(int J, double alpha) {
  return conditional_moments_polygamma(J, alpha).d_variance;
}

inline ConditionalMoments conditional_moments(int J, double alpha) {
  if (J <= kSummationMaxJ) return conditional_moments_summation(J, alpha);
  return conditional_moments_polygamma(J, alpha);
}

}  // namespace dpcalib
