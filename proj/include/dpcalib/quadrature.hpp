#pragma once

// Generalized Gauss-Laguerre rules and Gamma-mixed expectations over α ~ Gamma(a, b).

#include <Eigen/Eigenvalues>

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <utility>
#include <vector>

#include "dpcalib/error.hpp"
#include "dpcalib/exact_core.hpp"
#include "dpcalib/specfun.hpp"
#include "dpcalib/types.hpp"

namespace dpcalib {

inline constexpr int kDefaultQuadratureOrder = 80;
inline constexpr int kMinQuadratureOrder = 2;
inline constexpr int kMaxQuadratureOrder = 512;

/// Nodes and weights for ∫ g(x) x^{a-1} e^{-x} dx / Γ(a) ≈ Σ w_m g(x_m).
struct QuadratureRule {
  double shape = 1.0;
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> normalized_weights;
};

namespace detail {

// Associated Laguerre L_n^{(p)}(x) and L_{n-1}^{(p)}(x) sharing a common scale factor
// e^{log_scale}, so the ratio and |L_n| survive where the raw values would overflow.
struct ScaledLaguerre {
  double value = 0.0;
  double previous = 0.0;
  double log_scale = 0.0;
};

inline ScaledLaguerre laguerre(int n, double p, double x) {
  ScaledLaguerre out;
  double prev = 1.0;
  double cur = 1.0 + p - x;
  if (n == 0) {
    out.value = 1.0;
    return out;
  }
  for (int k = 1; k < n; ++k) {
    const double next = ((2.0 * k + 1.0 + p - x) * cur - (k + p) * prev) / (k + 1.0);
    prev = cur;
    cur = next;
    const double mag = std::abs(cur);
    if (mag > 1e150 || (mag < 1e-150 && mag > 0.0)) {
      const double s = mag;
      cur /= s;
      prev /= s;
      out.log_scale += std::log(s);
    }
  }
  out.value = cur;
  out.previous = prev;
  return out;
}

[[noreturn]] inline void rule_failure(double shape, int order, const std::string& what) {
  std::ostringstream os;
  os << "quadrature rule (shape=" << shape << ", order=" << order << "): " << what;
  throw CalibrationError(os.str());
}

// ln of the Christoffel function 1 / Σ_k q_k(x)² for the orthonormal polynomials of a Jacobi
// matrix (diag, sub); accumulated with rescaling so large arguments do not overflow.
inline double log_christoffel(const Eigen::VectorXd& diag, const Eigen::VectorXd& sub, double x) {
  const auto n = diag.size();
  double prev = 0.0;
  double cur = 1.0;
  double sum = 1.0;
  double log_scale = 0.0;
  for (Eigen::Index k = 1; k < n; ++k) {
    const double next = ((x - diag(k - 1)) * cur - (k > 1 ? sub(k - 2) : 0.0) * prev) / sub(k - 1);
    prev = cur;
    cur = next;
    sum += cur * cur;
    if (std::abs(cur) > 1e100) {
      const double f = std::abs(cur);
      cur /= f;
      prev /= f;
      sum /= f * f;
      log_scale += std::log(f);
    }
  }
  return -(std::log(sum) + 2.0 * log_scale);
}

}  // namespace detail

/// Golub-Welsch nodes, Newton-polished, with Christoffel weights evaluated in log space.
inline QuadratureRule build_rule(double shape, int order = kDefaultQuadratureOrder) {
  if (!std::isfinite(shape) || shape <= 0.0) {
    std::ostringstream os;
    os << "build_rule: shape must be finite and > 0, got " << shape;
    throw DomainError(os.str());
  }
  if (order < kMinQuadratureOrder || order > kMaxQuadratureOrder) {
    std::ostringstream os;
    os << "build_rule: order must lie in [" << kMinQuadratureOrder << ", " << kMaxQuadratureOrder
       << "], got " << order;
    throw DomainError(os.str());
  }
  const double p = shape - 1.0;
  const int n = order;

  Eigen::VectorXd diag(n);
  Eigen::VectorXd sub(n - 1);
  for (int k = 0; k < n; ++k) diag(k) = 2.0 * k + 1.0 + p;
  for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(k * (k + p));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) detail::rule_failure(shape, order, "eigen-solver failed");

  QuadratureRule rule;
  rule.shape = shape;
  rule.order = order;
  rule.nodes.resize(n);
  std::vector<double> log_w(n);

  for (int i = 0; i < n; ++i) {
    double x = solver.eigenvalues()(i);
    if (!(x > 0.0)) detail::rule_failure(shape, order, "non-positive node");
    for (int it = 0; it < 3; ++it) {
      const auto l = detail::laguerre(n, p, x);
      const double denom = n * l.value - (n + p) * l.previous;  // x · L_n'(x), same scale
      if (denom == 0.0) break;
      const double step = x * l.value / denom;
      if (!std::isfinite(step) || std::abs(step) > 1e-6 * x) break;
      x -= step;
      if (std::abs(step) <= 1e-15 * x) break;
    }
    rule.nodes[i] = x;
    log_w[i] = detail::log_christoffel(diag, sub, x);
  }
  for (int i = 1; i < n; ++i) {
    if (!(rule.nodes[i] > rule.nodes[i - 1])) {
      detail::rule_failure(shape, order, "nodes not strictly increasing");
    }
  }
  const double log_total = log_sum_exp(log_w);
  rule.normalized_weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.normalized_weights[i] = std::exp(log_w[i] - log_total);
    if (!std::isfinite(rule.normalized_weights[i])) {
      detail::rule_failure(shape, order, "non-finite weight");
    }
  }
  return rule;
}

namespace detail {

// Bounded FIFO memo of immutable rules keyed by (shape rounded to 1e-12, order).
template <class Rule>
class RuleCache {
 public:
  template <class Build>
  std::shared_ptr<const Rule> get(double shape, int order, Build&& build) {
    const Key key{std::round(shape * 1e12) / 1e12, order};
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto rule = std::make_shared<const Rule>(build(shape, order));
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    if (cache_.size() >= kCapacity) {
      cache_.erase(order_.front());
      order_.pop_front();
    }
    cache_.emplace(key, rule);
    order_.push_back(key);
    return rule;
  }

 private:
  using Key = std::pair<double, int>;
  static constexpr std::size_t kCapacity = 512;
  std::mutex mutex_;
  std::map<Key, std::shared_ptr<const Rule>> cache_;
  std::deque<Key> order_;
};

}  // namespace detail

/// Memoized rule keyed by (shape rounded to 1e-12, order); thread-safe, bounded.
inline std::shared_ptr<const QuadratureRule> cached_rule(double shape,
                                                         int order = kDefaultQuadratureOrder) {
  static detail::RuleCache<QuadratureRule> cache;
  return cache.get(shape, order, [](double s, int o) { return build_rule(s, o); });
}

inline constexpr int kShapeDirectionOrder = 24;

/// Gauss-Jacobi rule on (0, 1) for the weight u^{a-1}; weights sum to 1/a.
struct ShapeDirectionRule {
  double shape = 1.0;
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline ShapeDirectionRule build_shape_direction_rule(double shape, int order = kShapeDirectionOrder) {
  if (!std::isfinite(shape) || shape <= 0.0) {
    std::ostringstream os;
    os << "build_shape_direction_rule: shape must be finite and > 0, got " << shape;
    throw DomainError(os.str());
  }
  // Jacobi polynomials on [-1, 1] with weight (1 - t)^0 (1 + t)^{a-1}, mapped by u = (1 + t)/2.
  const double al = 0.0;
  const double be = shape - 1.0;
  const int n = order;
  Eigen::VectorXd diag(n);
  Eigen::VectorXd sub(n - 1);
  diag(0) = (be - al) / (al + be + 2.0);
  for (int k = 1; k < n; ++k) {
    const double s = 2.0 * k + al + be;
    diag(k) = (be * be - al * al) / (s * (s + 2.0));
    // k(k+α)(k+β)(k+α+β) / ((2k+α+β)² (2k+α+β+1)(2k+α+β−1)), with α = 0 so that (k+β)
    // cancels against the vanishing (2k+β−1) factor when β → −1.
    const double num = 4.0 * k * (k + al) * (k + be) * (k + al + be);
    sub(k - 1) = std::sqrt(num / (s * s * (s + 1.0) * (s - 1.0)));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) detail::rule_failure(shape, order, "Jacobi eigen-solver failed");

  ShapeDirectionRule rule;
  rule.shape = shape;
  rule.nodes.resize(n);
  std::vector<double> log_w(n);
  for (int i = 0; i < n; ++i) {
    const double t = solver.eigenvalues()(i);
    rule.nodes[i] = 0.5 * (1.0 + t);
    log_w[i] = detail::log_christoffel(diag, sub, t);
  }
  const double log_total = log_sum_exp(log_w);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) rule.weights[i] = std::exp(log_w[i] - log_total) / shape;
  return rule;
}

inline std::shared_ptr<const ShapeDirectionRule> cached_shape_direction_rule(double shape) {
  static detail::RuleCache<ShapeDirectionRule> cache;
  return cache.get(shape, kShapeDirectionOrder,
                   [](double s, int o) { return build_shape_direction_rule(s, o); });
}

namespace detail {

inline void check_rule_matches(const GammaHyperprior& hyper, const QuadratureRule& rule) {
  hyper.validate();
  if (std::abs(rule.shape - hyper.a) > 1e-12 * std::max(1.0, hyper.a)) {
    std::ostringstream os;
    os << "quadrature rule built for shape " << rule.shape << " used with hyperprior shape "
       << hyper.a;
    throw DomainError(os.str());
  }
}

[[noreturn]] inline void non_finite_node(int m, double alpha, const char* what) {
  std::ostringstream os;
  os << what << " is non-finite at quadrature node " << m << " (alpha=" << alpha << ")";
  throw CalibrationError(os.str());
}

// Rate score s_b = a/b − α at every node, centered by its quadrature mean (a polynomial in
// the node, so the centering only removes rounding).
inline std::vector<double> rate_scores(const GammaHyperprior& hyper, const QuadratureRule& rule) {
  std::vector<double> s(rule.order);
  double mean = 0.0;
  for (int m = 0; m < rule.order; ++m) {
    s[m] = hyper.a / hyper.b - rule.nodes[m] / hyper.b;
    mean += rule.normalized_weights[m] * s[m];
  }
  for (double& v : s) v -= mean;
  return s;
}

}  // namespace detail

/// E[g(α)] for α ~ Gamma(a, b), as Σ w_m g(x_m / b).
inline double gamma_expectation(const std::function<double(double)>& g,
                                const GammaHyperprior& hyper, const QuadratureRule& rule) {
  detail::check_rule_matches(hyper, rule);
  double acc = 0.0;
  for (int m = 0; m < rule.order; ++m) {
    const double alpha = rule.nodes[m] / hyper.b;
    const double v = g(alpha);
    if (!std::isfinite(v)) detail::non_finite_node(m, alpha, "integrand");
    acc += rule.normalized_weights[m] * v;
  }
  return acc;
}

/// Score-identity expectations E[g(α) s_a(α)] and E[g(α) s_b(α)].
///
/// The shape score s_a = ln b − ψ(a) + ln α carries a logarithmic singularity at α = 0 that
/// the Laguerre rule cannot resolve, so E[g s_a] is evaluated through the Frullani form of the
/// logarithm: E[g(α)(ln α − E ln α)] = −∫₀¹ u^{a−1} (E[g(uα)] − E[g(α)]) / (1 − u) du.
struct ScoreExpectation {
  double value = 0.0;
  double d_a = 0.0;
  double d_b = 0.0;
};

inline ScoreExpectation score_expectation(const std::function<double(double)>& g,
                                          const GammaHyperprior& hyper,
                                          const QuadratureRule& rule) {
  detail::check_rule_matches(hyper, rule);
  const auto s_b = detail::rate_scores(hyper, rule);
  ScoreExpectation out;
  for (int m = 0; m < rule.order; ++m) {
    const double alpha = rule.nodes[m] / hyper.b;
    const double v = g(alpha);
    if (!std::isfinite(v)) detail::non_finite_node(m, alpha, "integrand");
    out.value += rule.normalized_weights[m] * v;
    out.d_b += rule.normalized_weights[m] * v * s_b[m];
  }
  const auto shape_rule = cached_shape_direction_rule(hyper.a);
  for (std::size_t j = 0; j < shape_rule->nodes.size(); ++j) {
    const double u = shape_rule->nodes[j];
    double scaled = 0.0;
    for (int m = 0; m < rule.order; ++m) {
      const double alpha = u * rule.nodes[m] / hyper.b;
      const double v = g(alpha);
      if (!std::isfinite(v)) detail::non_finite_node(m, alpha, "integrand");
      scaled += rule.normalized_weights[m] * v;
    }
    out.d_a -= shape_rule->weights[j] * (scaled - out.value) / (1.0 - u);
  }
  return out;
}

/// Marginal moments of K_J under the Gamma mixture.
struct MixedMoments {
  double mean = 0.0;
  double variance = 0.0;
  double m1 = 0.0;  // E[κ_J(α)]
  double m2 = 0.0;  // E[κ_J(α)²]
  double v1 = 0.0;  // E[v_J(α)]
};

/// ∂(M₁, V)/∂(a, b).
struct MomentJacobian {
  double dmean_da = 0.0;
  double dmean_db = 0.0;
  double dvar_da = 0.0;
  double dvar_db = 0.0;
};

struct MomentsAndJacobian {
  MixedMoments moments;
  MomentJacobian jacobian;
};

namespace detail {

inline void check_mixed_design(int J) {
  if (J < 2) {
    std::ostringstream os;
    os << "mixed moments require J >= 2, got " << J;
    throw DomainError(os.str());
  }
}

struct RawMoments {
  double m1 = 0.0;
  double m2 = 0.0;
  double v1 = 0.0;
};

// (m1, m2, v1) over the rule with every node scaled by u; node-level κ values are returned
// through kappa_out when requested.
inline RawMoments raw_moments(int J, double b, double u, const QuadratureRule& rule,
                              std::vector<ConditionalMoments>* node_out = nullptr) {
  RawMoments r;
  if (node_out) node_out->resize(rule.order);
  for (int m = 0; m < rule.order; ++m) {
    const double alpha = u * rule.nodes[m] / b;
    const auto c = conditional_moments(J, alpha);
    if (!std::isfinite(c.mean) || !std::isfinite(c.variance)) {
      non_finite_node(m, alpha, "conditional moment");
    }
    if (node_out) (*node_out)[m] = c;
    const double w = rule.normalized_weights[m];
    r.m1 += w * c.mean;
    r.m2 += w * c.mean * c.mean;
    r.v1 += w * c.variance;
  }
  return r;
}

inline MixedMoments finish_moments(const RawMoments& r, const std::vector<ConditionalMoments>& nodes,
                                   const QuadratureRule& rule) {
  MixedMoments mm;
  mm.m1 = r.m1;
  mm.m2 = r.m2;
  mm.v1 = r.v1;
  double spread = 0.0;  // Var(κ) accumulated around the mean to avoid m2 − m1² cancellation
  for (int m = 0; m < rule.order; ++m) {
    const double dev = nodes[m].mean - r.m1;
    spread += rule.normalized_weights[m] * dev * dev;
  }
  mm.mean = r.m1;
  mm.variance = r.v1 + spread;
  return mm;
}

}  // namespace detail

inline MixedMoments mixed_moments(int J, const GammaHyperprior& hyper, const QuadratureRule& rule) {
  detail::check_mixed_design(J);
  detail::check_rule_matches(hyper, rule);
  std::vector<ConditionalMoments> nodes;
  const auto raw = detail::raw_moments(J, hyper.b, 1.0, rule, &nodes);
  return detail::finish_moments(raw, nodes, rule);
}

inline MixedMoments mixed_moments(int J, const GammaHyperprior& hyper,
                                  int order = kDefaultQuadratureOrder) {
  hyper.validate();
  return mixed_moments(J, hyper, *cached_rule(hyper.a, order));
}

/// Moments and their score-identity Jacobian, ∂θ m = E[g s_θ] for g ∈ {κ, κ², v} and
/// ∂θ V = ∂θ v1 + ∂θ m2 − 2 m1 ∂θ m1.
inline MomentsAndJacobian moments_and_jacobian(int J, const GammaHyperprior& hyper,
                                               const QuadratureRule& rule) {
  detail::check_mixed_design(J);
  detail::check_rule_matches(hyper, rule);
  std::vector<ConditionalMoments> nodes;
  const auto raw = detail::raw_moments(J, hyper.b, 1.0, rule, &nodes);
  MomentsAndJacobian out;
  out.moments = detail::finish_moments(raw, nodes, rule);

  const auto s_b = detail::rate_scores(hyper, rule);
  double dm1_db = 0.0;
  double dm2_db = 0.0;
  double dv1_db = 0.0;
  for (int m = 0; m < rule.order; ++m) {
    const double ws = rule.normalized_weights[m] * s_b[m];
    dm1_db += ws * nodes[m].mean;
    dm2_db += ws * nodes[m].mean * nodes[m].mean;
    dv1_db += ws * nodes[m].variance;
  }

  double dm1_da = 0.0;
  double dm2_da = 0.0;
  double dv1_da = 0.0;
  const auto shape_rule = cached_shape_direction_rule(hyper.a);
  for (std::size_t j = 0; j < shape_rule->nodes.size(); ++j) {
    const double u = shape_rule->nodes[j];
    const auto scaled = detail::raw_moments(J, hyper.b, u, rule);
    const double c = shape_rule->weights[j] / (1.0 - u);
    dm1_da -= c * (scaled.m1 - raw.m1);
    dm2_da -= c * (scaled.m2 - raw.m2);
    dv1_da -= c * (scaled.v1 - raw.v1);
  }

  const double m1 = raw.m1;
  out.jacobian.dmean_da = dm1_da;
  out.jacobian.dmean_db = dm1_db;
  out.jacobian.dvar_da = dv1_da + dm2_da - 2.0 * m1 * dm1_da;
  out.jacobian.dvar_db = dv1_db + dm2_db - 2.0 * m1 * dm1_db;
  return out;
}

inline MomentJacobian moment_jacobian(int J, const GammaHyperprior& hyper,
                                      const QuadratureRule& rule) {
  return moments_and_jacobian(J, hyper, rule).jacobian;
}

/// Marginal PMF of K_J with log-probabilities and score-identity gradients of ln p(k).
struct MarginalPmf {
  std::vector<double> p;
  std::vector<double> log_p;
  std::vector<double> dlogp_da;
  std::vector<double> dlogp_db;
};

namespace detail {

// ln Σ_m w_m Pr(K_J = k | u·α_m) for every k, plus the per-node log terms when requested.
inline std::vector<double> mixed_log_pmf(int J, double b, double u, const QuadratureRule& rule,
                                         const LogStirlingTable& table,
                                         std::vector<std::vector<double>>* node_log = nullptr) {
  const int n = rule.order;
  std::vector<std::vector<double>> local;
  auto& terms = node_log ? *node_log : local;
  terms.resize(n);
  for (int m = 0; m < n; ++m) {
    const double alpha = u * rule.nodes[m] / b;
    terms[m] = antoniak_log_pmf(J, alpha, table);
    const double lw = std::log(rule.normalized_weights[m]);
    for (double& v : terms[m]) v += lw;
  }
  std::vector<double> out(J);
  std::vector<double> column(n);
  for (int k = 0; k < J; ++k) {
    for (int m = 0; m < n; ++m) column[m] = terms[m][k];
    out[k] = log_sum_exp(column);
  }
  return out;
}

}  // namespace detail

inline MarginalPmf marginal_pmf_detailed(int J, const GammaHyperprior& hyper,
                                         const LogStirlingTable& table, const QuadratureRule& rule,
                                         bool with_gradient = false) {
  detail::check_rule_matches(hyper, rule);
  if (J < 1 || J > table.j_max()) {
    std::ostringstream os;
    os << "marginal_pmf: J=" << J << " outside [1, " << table.j_max() << "]";
    throw DomainError(os.str());
  }
  std::vector<std::vector<double>> node_log;
  MarginalPmf out;
  out.log_p = detail::mixed_log_pmf(J, hyper.b, 1.0, rule, table, with_gradient ? &node_log : nullptr);
  const std::vector<double> raw_log = out.log_p;
  const double log_total = log_sum_exp(out.log_p);
  out.p.resize(J);
  for (int k = 0; k < J; ++k) {
    out.log_p[k] -= log_total;
    out.p[k] = std::exp(out.log_p[k]);
  }
  if (!with_gradient) return out;

  out.dlogp_da.assign(J, 0.0);
  out.dlogp_db.assign(J, 0.0);
  const auto s_b = detail::rate_scores(hyper, rule);
  for (int k = 0; k < J; ++k) {
    if (raw_log[k] == kNegInf) continue;
    for (int m = 0; m < rule.order; ++m) {
      out.dlogp_db[k] += std::exp(node_log[m][k] - raw_log[k]) * s_b[m];
    }
  }
  const auto shape_rule = cached_shape_direction_rule(hyper.a);
  for (std::size_t j = 0; j < shape_rule->nodes.size(); ++j) {
    const double u = shape_rule->nodes[j];
    const auto scaled = detail::mixed_log_pmf(J, hyper.b, u, rule, table);
    const double c = shape_rule->weights[j] / (1.0 - u);
    for (int k = 0; k < J; ++k) {
      if (raw_log[k] == kNegInf) continue;
      out.dlogp_da[k] -= c * std::expm1(scaled[k] - raw_log[k]);
    }
  }
  return out;
}

inline std::vector<double> marginal_pmf(int J, const GammaHyperprior& hyper,
                                        const LogStirlingTable& table, const QuadratureRule& rule) {
  return marginal_pmf_detailed(J, hyper, table, rule).p;
}

inline std::vector<double> marginal_pmf(int J, const GammaHyperprior& hyper,
                                        int order = kDefaultQuadratureOrder) {
  hyper.validate();
  return marginal_pmf(J, hyper, *stirling_table(J), *cached_rule(hyper.a, order));
}

}  // namespace dpcalib
