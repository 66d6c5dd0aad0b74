#pragma once

// Monte-Carlo reference samplers for the cluster count and the stick-breaking weights.
// Draws are split into a fixed number of chunks, each with its own seeded stream, so results
// depend only on (seed, draws) and not on how many threads run them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <future>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dpcalib/error.hpp"
#include "dpcalib/quadrature.hpp"
#include "dpcalib/types.hpp"
#include "dpcalib/weights.hpp"

namespace dpcalib {

struct McConfig {
  std::int64_t draws = 100000;
  std::uint64_t seed = 42;
  double stick_truncation_tail = 1e-12;

  void validate() const {
    if (draws < 1) throw DomainError("Monte Carlo draws must be >= 1");
    if (!(stick_truncation_tail > 0.0 && stick_truncation_tail <= 1e-6)) {
      std::ostringstream os;
      os << "stick truncation tail must lie in (0, 1e-6], got " << stick_truncation_tail;
      throw DomainError(os.str());
    }
  }
};

struct McSummary {
  double estimate = 0.0;
  double std_error = 0.0;
  std::int64_t draws = 0;
};

/// Streaming central moments up to order four, mergeable across chunks.
class MomentAccumulator {
 public:
  void push(double x) {
    const double n1 = static_cast<double>(n_);
    ++n_;
    const double n = static_cast<double>(n_);
    const double delta = x - mean_;
    const double dn = delta / n;
    const double dn2 = dn * dn;
    const double term1 = delta * dn * n1;
    mean_ += dn;
    m4_ += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2_ - 4.0 * dn * m3_;
    m3_ += term1 * dn * (n - 2.0) - 3.0 * dn * m2_;
    m2_ += term1;
  }

  /// n copies of the value x.
  static MomentAccumulator constant(double x, std::int64_t n) {
    MomentAccumulator acc;
    acc.n_ = n;
    acc.mean_ = n > 0 ? x : 0.0;
    return acc;
  }

  void merge(const MomentAccumulator& o) {
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(o.n_);
    const double n = na + nb;
    const double d = o.mean_ - mean_;
    const double d2 = d * d;
    const double m2 = m2_ + o.m2_ + d2 * na * nb / n;
    const double m3 = m3_ + o.m3_ + d * d2 * na * nb * (na - nb) / (n * n) +
                      3.0 * d * (na * o.m2_ - nb * m2_) / n;
    const double m4 = m4_ + o.m4_ + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                      6.0 * d2 * (na * na * o.m2_ + nb * nb * m2_) / (n * n) +
                      4.0 * d * (na * o.m3_ - nb * m3_) / n;
    mean_ += d * nb / n;
    m2_ = m2;
    m3_ = m3;
    m4_ = m4;
    n_ += o.n_;
  }

  std::int64_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }

  McSummary mean_summary() const {
    return {mean_, n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0, n_};
  }

  /// Sample variance with the large-sample standard error √((μ₄ − σ⁴)/n).
  McSummary variance_summary() const {
    if (n_ < 2) return {0.0, 0.0, n_};
    const double n = static_cast<double>(n_);
    const double mu2 = m2_ / n;
    const double mu4 = m4_ / n;
    return {variance(), std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / n), n_};
  }

 private:
  std::int64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double m3_ = 0.0;
  double m4_ = 0.0;
};

using McRng = std::mt19937_64;

/// Independent generator for chunk `stream` of a run seeded with `seed`.
inline McRng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return McRng(seq);
}

inline double uniform_open(McRng& rng) {
  // (0, 1): never returns an endpoint, so logs and powers stay finite.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double sample_alpha(const GammaHyperprior& hyper, McRng& rng) {
  std::gamma_distribution<double> gamma(hyper.a, 1.0 / hyper.b);
  const double alpha = gamma(rng);
  return std::max(alpha, std::numeric_limits<double>::denorm_min());
}

/// K_J given α through the independent indicators 1{table r+1 is new} ~ Bernoulli(α/(α+r)).
inline int sample_K_crp(int J, double alpha, McRng& rng) {
  if (J < 1) throw DomainError("sample_K_crp: J must be >= 1");
  int k = 1;
  for (int r = 1; r < J; ++r) k += uniform_open(rng) * (alpha + r) < alpha ? 1 : 0;
  return k;
}

/// w1 ~ Beta(1, α) after α ~ Gamma(a, b), by inversion: 1 − U^{1/α}.
inline double sample_w1(const GammaHyperprior& hyper, McRng& rng) {
  const double alpha = sample_alpha(hyper, rng);
  return -std::expm1(std::log(uniform_open(rng)) / alpha);
}

inline constexpr std::int64_t kMaxSticks = 1000000;

/// ρ = Σ w_h² with sticks drawn until the unassigned mass falls below the truncation tail,
/// which is then added as one final atom.
inline double sample_rho(const GammaHyperprior& hyper, const McConfig& cfg, McRng& rng) {
  const double alpha = sample_alpha(hyper, rng);
  double remaining = 1.0;
  double rho = 0.0;
  std::int64_t sticks = 0;
  while (remaining >= cfg.stick_truncation_tail) {
    if (++sticks > kMaxSticks) {
      std::ostringstream os;
      os << "sample_rho: more than " << kMaxSticks << " sticks needed at alpha draw " << alpha;
      throw ConvergenceError(os.str());
    }
    const double v = -std::expm1(std::log(uniform_open(rng)) / alpha);
    const double w = remaining * v;
    rho += w * w;
    remaining -= w;
  }
  return rho + remaining * remaining;
}

inline constexpr int kMcChunks = 32;

/// Runs body(rng, n) on kMcChunks deterministic slices of `draws` in parallel and returns the
/// per-chunk results in chunk order.
template <class Result>
std::vector<Result> run_chunks(std::int64_t draws, std::uint64_t seed,
                               const std::function<Result(McRng&, std::int64_t)>& body) {
  const std::int64_t chunks = std::min<std::int64_t>(kMcChunks, draws);
  std::vector<std::future<Result>> jobs;
  jobs.reserve(static_cast<std::size_t>(chunks));
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t n = draws / chunks + (c < draws % chunks ? 1 : 0);
    jobs.push_back(std::async(std::launch::async, [&body, seed, c, n] {
      McRng rng = make_stream(seed, static_cast<std::uint64_t>(c));
      return body(rng, n);
    }));
  }
  std::vector<Result> out;
  out.reserve(jobs.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

/// Histogram of K_J over 1..J under the Gamma-mixed prior (counts at index k-1).
inline std::vector<std::int64_t> sample_prior_predictive_K(int J, const GammaHyperprior& hyper,
                                                          const McConfig& cfg) {
  hyper.validate();
  cfg.validate();
  if (J < 1) throw DomainError("sample_prior_predictive_K: J must be >= 1");
  using Hist = std::vector<std::int64_t>;
  const auto parts = run_chunks<Hist>(cfg.draws, cfg.seed, [&](McRng& rng, std::int64_t n) {
    Hist h(static_cast<std::size_t>(J), 0);
    for (std::int64_t i = 0; i < n; ++i) ++h[sample_K_crp(J, sample_alpha(hyper, rng), rng) - 1];
    return h;
  });
  Hist total(static_cast<std::size_t>(J), 0);
  for (const auto& h : parts)
    for (int k = 0; k < J; ++k) total[k] += h[k];
  return total;
}

inline MomentAccumulator moments_of_histogram(const std::vector<std::int64_t>& hist) {
  MomentAccumulator acc;
  for (std::size_t k = 0; k < hist.size(); ++k)
    acc.merge(MomentAccumulator::constant(static_cast<double>(k + 1), hist[k]));
  return acc;
}

/// Moments of an arbitrary scalar draw accumulated across chunks.
inline MomentAccumulator sample_moments(const McConfig& cfg,
                                        const std::function<double(McRng&)>& draw) {
  cfg.validate();
  const auto parts = run_chunks<MomentAccumulator>(
      cfg.draws, cfg.seed, [&](McRng& rng, std::int64_t n) {
        MomentAccumulator acc;
        for (std::int64_t i = 0; i < n; ++i) acc.push(draw(rng));
        return acc;
      });
  MomentAccumulator total;
  for (const auto& p : parts) total.merge(p);
  return total;
}

inline McSummary mc_w1_survival(double t, const GammaHyperprior& hyper, const McConfig& cfg) {
  hyper.validate();
  return sample_moments(cfg, [&](McRng& rng) { return sample_w1(hyper, rng) > t ? 1.0 : 0.0; })
      .mean_summary();
}

struct McRhoSummary {
  McSummary mean;
  McSummary variance;
};

inline McRhoSummary mc_rho_moments(const GammaHyperprior& hyper, const McConfig& cfg) {
  hyper.validate();
  const auto acc = sample_moments(cfg, [&](McRng& rng) { return sample_rho(hyper, cfg, rng); });
  return {acc.mean_summary(), acc.variance_summary()};
}

struct ValidationCheck {
  std::string name;
  double closed_form = 0.0;
  double mc_estimate = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  bool pass = false;
};

inline constexpr double kValidationZ = 4.0;

inline ValidationCheck make_check(std::string name, double exact, const McSummary& mc) {
  ValidationCheck c;
  c.name = std::move(name);
  c.closed_form = exact;
  c.mc_estimate = mc.estimate;
  c.std_error = mc.std_error;
  const double diff = mc.estimate - exact;
  c.z = mc.std_error > 0.0 ? diff / mc.std_error : (diff == 0.0 ? 0.0 : HUGE_VAL);
  c.pass = std::abs(c.z) <= kValidationZ;
  return c;
}

/// Closed-form and quadrature quantities against their Monte-Carlo counterparts.
inline std::vector<ValidationCheck> validate_against_mc(int J, const GammaHyperprior& hyper,
                                                        const McConfig& cfg,
                                                        int order = kDefaultQuadratureOrder) {
  hyper.validate();
  cfg.validate();
  const auto rule = cached_rule(hyper.a, order);
  const auto moments = mixed_moments(J, hyper, *rule);
  const auto rho = rho_moments(hyper, *rule);

  McConfig k_cfg = cfg;
  const auto k_acc = moments_of_histogram(sample_prior_predictive_K(J, hyper, k_cfg));
  McConfig w_cfg = cfg;
  w_cfg.seed = cfg.seed + 1;
  McConfig r_cfg = cfg;
  r_cfg.seed = cfg.seed + 2;
  const auto w_acc = sample_moments(w_cfg, [&](McRng& rng) { return sample_w1(hyper, rng); });
  const auto w50 = mc_w1_survival(0.5, hyper, w_cfg);
  const auto w90 = mc_w1_survival(0.9, hyper, w_cfg);
  const auto mc_rho = mc_rho_moments(hyper, r_cfg);

  return {
      make_check("E[K]", moments.mean, k_acc.mean_summary()),
      make_check("Var[K]", moments.variance, k_acc.variance_summary()),
      make_check("E[w1]", w1_mean(hyper, *rule), w_acc.mean_summary()),
      make_check("Pr(w1 > 0.5)", w1_survival(0.5, hyper).probability, w50),
      make_check("Pr(w1 > 0.9)", w1_survival(0.9, hyper).probability, w90),
      make_check("E[rho]", rho.mean, mc_rho.mean),
      make_check("Var[rho]", rho.variance, mc_rho.variance),
  };
}

}  // namespace dpcalib
