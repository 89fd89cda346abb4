#pragma once

#include <cstdint>
#include <optional>
#include <span>

namespace skb {

/// Pearson r; nullopt when the sizes differ, n < 2, or either side has zero variance.
std::optional<double> correlation(std::span<const double> xs, std::span<const double> ys);

struct HypothesisResult {
  double mean_diff = 0.0;
  double p_value = 1.0;
  bool reject_h0 = false;
  bool exact = false;  // all sign flips enumerated
  std::size_t resamples = 0;
};

inline constexpr double kAlpha = 0.05;
inline constexpr std::size_t kPermutationResamples = 10000;

/// Paired one-sided sign-flip permutation test of H1: mean(augmented - vanilla) > 0.
/// Enumerates every flip when 2^n <= resamples, otherwise draws `resamples`
/// seeded flips. Needs at least 5 pairs.
HypothesisResult hypothesis_test(std::span<const double> vanilla, std::span<const double> augmented,
                                 std::uint64_t rng_seed = 0,
                                 std::size_t resamples = kPermutationResamples);

struct CountInterval {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
};

/// Smallest equal-tailed acceptance region [lo, hi] of Binomial(n, p) with
/// P(X < lo) <= (1 - level) / 2 and P(X > hi) <= (1 - level) / 2.
CountInterval binomial_acceptance_interval(std::uint64_t n, double p, double level);

double binomial_pmf(std::uint64_t n, std::uint64_t k, double p);

}  // namespace skb
