#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "skb/error.hpp"
#include "skb/random.hpp"
#include "skb/statistics.hpp"

using namespace skb;

TEST(Correlation, PerfectLines) {
  const std::vector<double> x = {1, 2, 3};
  const std::vector<double> down = {3, 2, 1};
  EXPECT_EQ(*correlation(x, down), -1.0);
  EXPECT_EQ(*correlation(x, x), 1.0);
}

TEST(Correlation, RandomPairsMatchTextbookFormula) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(10);
    std::vector<double> y(10);
    for (int i = 0; i < 10; ++i) {
      x[static_cast<std::size_t>(i)] = rng.uniform(0.0, 100.0);
      y[static_cast<std::size_t>(i)] = rng.uniform(0.0, 1.0);
    }
    EXPECT_NEAR(*correlation(x, y), oracle::pearson(x, y), 1e-12);
  }
}

TEST(Correlation, Degenerate) {
  const std::vector<double> flat = {2, 2, 2};
  const std::vector<double> x = {1, 2, 3};
  EXPECT_FALSE(correlation(flat, x).has_value());
  EXPECT_FALSE(correlation(std::vector<double>{1}, std::vector<double>{1}).has_value());
  EXPECT_FALSE(correlation(x, std::vector<double>{1, 2}).has_value());
}

TEST(Hypothesis, ConstantUpliftIsExactlyOneIn1024) {
  std::vector<double> v(10);
  std::vector<double> a(10);
  for (int i = 0; i < 10; ++i) {
    v[static_cast<std::size_t>(i)] = 0.1 + 0.03 * i;
    a[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)] + 0.2;
  }
  const auto r = hypothesis_test(v, a);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.resamples, 1024u);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0 / 1024.0);
  EXPECT_TRUE(r.reject_h0);
  EXPECT_NEAR(r.mean_diff, 0.2, 1e-12);
}

TEST(Hypothesis, NoEffect) {
  const std::vector<double> v = {0.2, 0.3, 0.1, 0.4, 0.25, 0.3};
  const auto same = hypothesis_test(v, v);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_FALSE(same.reject_h0);

  const std::vector<double> base = {0.5, 0.5, 0.5, 0.5, 0.5};
  const std::vector<double> alt = {0.6, 0.4, 0.6, 0.4, 0.5};
  const auto r = hypothesis_test(base, alt);
  EXPECT_NEAR(r.mean_diff, 0.0, 1e-12);
  EXPECT_FALSE(r.reject_h0);
}

TEST(Hypothesis, EnumerationOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 5 + rng.uniform_index(6);
    std::vector<double> v(n);
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = rng.uniform01();
      a[i] = v[i] + rng.uniform(-0.1, 0.3);
    }
    double observed = 0.0;
    for (std::size_t i = 0; i < n; ++i) observed += a[i] - v[i];
    int extreme = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += ((mask >> i) & 1u ? -1.0 : 1.0) * (a[i] - v[i]);
      if (s >= observed - 1e-12) ++extreme;
    }
    EXPECT_DOUBLE_EQ(hypothesis_test(v, a).p_value, extreme / std::pow(2.0, static_cast<double>(n)));
  }
}

TEST(Hypothesis, MonteCarloForLargeSamples) {
  std::vector<double> v(20, 0.3);
  std::vector<double> a(20, 0.5);
  const auto r = hypothesis_test(v, a, 3);
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.resamples, kPermutationResamples);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0 / (kPermutationResamples + 1));
  EXPECT_EQ(hypothesis_test(v, a, 3).p_value, r.p_value);
  EXPECT_THROW(hypothesis_test(std::vector<double>(4, 0.1), std::vector<double>(4, 0.2)), ValidationError);
}

TEST(Binomial, IntervalTails) {
  const auto ci = binomial_acceptance_interval(100, 0.2, 0.99);
  double below = 0.0;
  for (std::uint64_t k = 0; k < ci.lo; ++k) below += binomial_pmf(100, k, 0.2);
  double above = 0.0;
  for (std::uint64_t k = ci.hi + 1; k <= 100; ++k) above += binomial_pmf(100, k, 0.2);
  EXPECT_LE(below, 0.005);
  EXPECT_LE(above, 0.005);
  EXPECT_GT(below + binomial_pmf(100, ci.lo, 0.2), 0.005);
  EXPECT_GT(above + binomial_pmf(100, ci.hi, 0.2), 0.005);
  EXPECT_LT(ci.lo, 20u);
  EXPECT_GT(ci.hi, 20u);
  double total = 0.0;
  for (std::uint64_t k = 0; k <= 50; ++k) total += binomial_pmf(50, k, 0.1);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(binomial_pmf(4, 2, 0.5), 6.0 / 16.0, 1e-15);
}
