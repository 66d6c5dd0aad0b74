#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dpcalib/mc_oracle.hpp"
#include "dpcalib/weights.hpp"
#include "support/generators.hpp"

using namespace dpcalib;
using dpcalib::testing::Gen;

namespace {

McConfig config(std::int64_t draws, std::uint64_t seed) {
  McConfig cfg;
  cfg.draws = draws;
  cfg.seed = seed;
  return cfg;
}

double total_variation(const std::vector<std::int64_t>& hist, const std::vector<double>& pmf) {
  const double n = static_cast<double>(std::accumulate(hist.begin(), hist.end(), std::int64_t{0}));
  double tv = 0.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) tv += std::abs(hist[k] / n - pmf[k]);
  return 0.5 * tv;
}

}  // namespace

TEST(McConfig, Validation) {
  EXPECT_NO_THROW(McConfig{}.validate());
  McConfig bad;
  bad.draws = 0;
  EXPECT_ANY_THROW(bad.validate());
  bad = {};
  bad.stick_truncation_tail = 1e-3;
  EXPECT_ANY_THROW(bad.validate());
  bad.stick_truncation_tail = 0.0;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(MomentAccumulator, MatchesTwoPassAndMergesAssociatively) {
  Gen g(801);
  const auto xs = g.many(5000, [](Gen& gg) { return gg.log_uniform(1e-3, 1e3); });
  MomentAccumulator whole;
  for (double x : xs) whole.push(x);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(whole.mean(), mean, 1e-12 * mean);
  EXPECT_NEAR(whole.variance(), ss / (xs.size() - 1), 1e-10 * ss / xs.size());

  for (int split : {1, 17, 2500, 4999}) {
    MomentAccumulator left;
    MomentAccumulator right;
    for (int i = 0; i < split; ++i) left.push(xs[i]);
    for (std::size_t i = split; i < xs.size(); ++i) right.push(xs[i]);
    left.merge(right);
    EXPECT_EQ(left.count(), whole.count());
    EXPECT_NEAR(left.mean(), whole.mean(), 1e-12 * whole.mean());
    EXPECT_NEAR(left.variance(), whole.variance(), 1e-10 * whole.variance());
    EXPECT_NEAR(left.variance_summary().std_error, whole.variance_summary().std_error,
                1e-8 * whole.variance_summary().std_error);
  }
  const auto c = MomentAccumulator::constant(3.0, 10);
  EXPECT_EQ(c.count(), 10);
  EXPECT_EQ(c.mean(), 3.0);
  EXPECT_EQ(c.variance(), 0.0);
}

TEST(UniformOpen, NeverHitsEndpoints) {
  McRng rng = make_stream(1, 0);
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform_open(rng);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(SampleK, SingleUnitAndHugeConcentration) {
  McRng rng = make_stream(2, 0);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_K_crp(1, 0.7, rng), 1);
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(sample_K_crp(50, 1e8, rng), 50);
  EXPECT_THROW(sample_K_crp(0, 1.0, rng), DomainError);
}

TEST(SampleK, ThreeUnitsMatchExactPmf) {
  const std::vector<double> exact{1.0 / 3.0, 1.0 / 2.0, 1.0 / 6.0};
  const auto parts = run_chunks<std::vector<std::int64_t>>(1000000, 3, [](McRng& rng, std::int64_t n) {
    std::vector<std::int64_t> h(3, 0);
    for (std::int64_t i = 0; i < n; ++i) ++h[sample_K_crp(3, 1.0, rng) - 1];
    return h;
  });
  std::vector<std::int64_t> h(3, 0);
  for (const auto& p : parts)
    for (int k = 0; k < 3; ++k) h[k] += p[k];
  for (int k = 0; k < 3; ++k) {
    const double phat = h[k] / 1e6;
    const double se = std::sqrt(exact[k] * (1.0 - exact[k]) / 1e6);
    EXPECT_LE(std::abs(phat - exact[k]), 4.0 * se) << "k=" << k + 1;
  }
}

TEST(PriorPredictiveK, WorkedExampleMomentsAndDistribution) {
  const GammaHyperprior h{1.40821, 1.07699};
  const auto hist = sample_prior_predictive_K(50, h, config(1000000, 11));
  const auto acc = moments_of_histogram(hist);
  EXPECT_EQ(acc.count(), 1000000);
  const auto m = acc.mean_summary();
  const auto v = acc.variance_summary();
  EXPECT_LE(std::abs(m.estimate - 5.0), 3.0 * m.std_error) << m.estimate;
  EXPECT_LE(std::abs(v.estimate - 10.0), 3.0 * v.std_error) << v.estimate;
  EXPECT_LE(total_variation(hist, marginal_pmf(50, h)), 0.01);
}

TEST(PriorPredictiveK, DegeneratePriorCollapsesToFixedConcentration) {
  const auto hist = sample_prior_predictive_K(20, {1e8, 1e8}, config(200000, 12));
  const auto exact = antoniak_pmf(20, 1.0);
  for (int k = 0; k < 20; ++k) {
    const double phat = hist[k] / 2e5;
    const double se = std::sqrt(std::max(exact[k] * (1.0 - exact[k]), 1e-12) / 2e5);
    EXPECT_LE(std::abs(phat - exact[k]), 4.0 * se + 1e-6) << "k=" << k + 1;
  }
}

TEST(SampleW1, VagueTailAndQuantiles) {
  const GammaHyperprior vague{1.0, 1.0};
  const auto tail = mc_w1_survival(0.5, vague, config(1000000, 13));
  EXPECT_LE(std::abs(tail.estimate - 0.591), 4.0 * tail.std_error + 5e-4);
  EXPECT_LE(std::abs(tail.estimate - w1_survival(0.5, vague).probability), 4.0 * tail.std_error);

  const GammaHyperprior h{1.408, 1.077};
  for (double u : {0.1, 0.5, 0.9}) {
    const double q = w1_quantile(u, h);
    const auto below = sample_moments(config(200000, 14), [&](McRng& rng) { return sample_w1(h, rng) <= q ? 1.0 : 0.0; })
                           .mean_summary();
    EXPECT_LE(std::abs(below.estimate - u), 4.0 * below.std_error) << "u=" << u;
  }
}

TEST(SampleW1, HugeConcentrationGivesTinyWeights) {
  McRng rng = make_stream(15, 0);
  int small = 0;
  for (int i = 0; i < 10000; ++i) small += sample_w1({1e8, 1.0}, rng) < 1e-6 ? 1 : 0;
  EXPECT_GE(small, 9990);
}

TEST(SampleRho, DegenerateConcentrationAtOne) {
  const auto r = mc_rho_moments({1e8, 1e8}, config(400000, 16));
  EXPECT_LE(std::abs(r.mean.estimate - 0.5), 4.0 * r.mean.std_error);
  EXPECT_LE(std::abs(r.variance.estimate - 1.0 / 24.0), 4.0 * r.variance.std_error);
}

TEST(SampleRho, WorkedExampleMeanAndVariance) {
  const GammaHyperprior h{1.407, 1.076};
  const auto r = mc_rho_moments(h, config(1000000, 17));
  EXPECT_LE(std::abs(r.mean.estimate - 0.52), 3.0 * r.mean.std_error + 0.005);
  const auto exact = rho_moments({1.408, 1.077}, build_rule(1.408, 80));
  const auto r2 = mc_rho_moments({1.408, 1.077}, config(1000000, 18));
  EXPECT_LE(std::abs(r2.variance.estimate - exact.variance), 4.0 * r2.variance.std_error);
}

TEST(SampleRho, ValuesInUnitInterval) {
  McRng rng = make_stream(19, 0);
  McConfig cfg;
  for (int i = 0; i < 20000; ++i) {
    const double r = sample_rho({0.5, 0.5}, cfg, rng);
    ASSERT_GT(r, 0.0);
    ASSERT_LE(r, 1.0 + 1e-12);
  }
}

TEST(Reproducibility, SameSeedSameSummaries) {
  const GammaHyperprior h{1.408, 1.077};
  const auto a = sample_prior_predictive_K(50, h, config(50000, 99));
  const auto b = sample_prior_predictive_K(50, h, config(50000, 99));
  EXPECT_EQ(a, b);
  const auto c = sample_prior_predictive_K(50, h, config(50000, 100));
  EXPECT_NE(a, c);
  const auto r1 = mc_rho_moments(h, config(20000, 5));
  const auto r2 = mc_rho_moments(h, config(20000, 5));
  EXPECT_EQ(r1.mean.estimate, r2.mean.estimate);
  EXPECT_EQ(r1.variance.estimate, r2.variance.estimate);
}

TEST(ValidateAgainstMc, WorkedExampleAllChecksPass) {
  const auto checks = validate_against_mc(50, {1.40821, 1.07699}, config(100000, 42));
  ASSERT_EQ(checks.size(), 7u);
  for (const auto& c : checks) {
    EXPECT_TRUE(c.pass) << c.name << " z=" << c.z;
    EXPECT_GE(c.std_error, 0.0);
  }
  const auto again = validate_against_mc(50, {1.40821, 1.07699}, config(100000, 42));
  for (std::size_t i = 0; i < checks.size(); ++i) EXPECT_EQ(checks[i].mc_estimate, again[i].mc_estimate);
}

TEST(ValidateAgainstMc, HyperpriorGrid) {
  for (const GammaHyperprior h : {GammaHyperprior{0.7, 0.5}, GammaHyperprior{2.0, 1.0}, GammaHyperprior{6.0, 2.0}}) {
    for (const auto& c : validate_against_mc(60, h, config(400000, 2024))) {
      EXPECT_TRUE(c.pass) << "(" << h.a << "," << h.b << ") " << c.name << " z=" << c.z;
    }
  }
}

TEST(MakeCheck, ZScoreAndThreshold) {
  const auto ok = make_check("x", 1.0, {1.3, 0.1, 100});
  EXPECT_NEAR(ok.z, 3.0, 1e-12);
  EXPECT_TRUE(ok.pass);
  const auto bad = make_check("x", 1.0, {1.5, 0.1, 100});
  EXPECT_FALSE(bad.pass);
  EXPECT_TRUE(make_check("x", 1.0, {1.0, 0.0, 100}).pass);
  EXPECT_FALSE(make_check("x", 1.0, {1.1, 0.0, 100}).pass);
}
