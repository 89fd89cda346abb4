#include "skb/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "skb/error.hpp"
#include "skb/random.hpp"

namespace skb {

std::optional<double> correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) return std::nullopt;
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

HypothesisResult hypothesis_test(std::span<const double> vanilla, std::span<const double> augmented,
                                 std::uint64_t rng_seed, std::size_t resamples) {
  if (vanilla.size() != augmented.size()) throw ValidationError("paired samples differ in size");
  if (vanilla.size() < 5) throw ValidationError("hypothesis test needs at least 5 pairs");
  if (resamples == 0) throw ConfigError("resamples must be positive");
  const std::size_t n = vanilla.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = augmented[i] - vanilla[i];

  HypothesisResult r;
  r.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  // Flipped sums that tie the observed one count as extreme.
  const double observed = std::accumulate(d.begin(), d.end(), 0.0);
  const double tol = 1e-12 * std::max(1.0, std::abs(observed));

  if (n < 63 && (std::uint64_t{1} << n) <= resamples) {
    const std::uint64_t total = std::uint64_t{1} << n;
    std::uint64_t extreme = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += ((mask >> i) & 1U) ? -d[i] : d[i];
      if (s >= observed - tol) ++extreme;
    }
    r.exact = true;
    r.resamples = total;
    r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
  } else {
    Rng rng(derive_seed(rng_seed, {0x51F7ULL}));
    std::uint64_t extreme = 0;
    for (std::size_t k = 0; k < resamples; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (rng.next() >> 63) ? -d[i] : d[i];
      if (s >= observed - tol) ++extreme;
    }
    r.resamples = resamples;
    r.p_value = static_cast<double>(extreme + 1) / static_cast<double>(resamples + 1);
  }
  r.reject_h0 = r.p_value < kAlpha;
  return r;
}

double binomial_pmf(std::uint64_t n, std::uint64_t k, double p) {
  if (k > n) return 0.0;
  if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return k == n ? 1.0 : 0.0;
  const double dn = static_cast<double>(n);
  const double dk = static_cast<double>(k);
  const double log_choose = std::lgamma(dn + 1) - std::lgamma(dk + 1) - std::lgamma(dn - dk + 1);
  return std::exp(log_choose + dk * std::log(p) + (dn - dk) * std::log1p(-p));
}

CountInterval binomial_acceptance_interval(std::uint64_t n, double p, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must be in (0, 1)");
  const double tail = (1.0 - level) / 2.0;
  CountInterval ci{0, n};
  double below = 0.0;
  while (ci.lo < n && below + binomial_pmf(n, ci.lo, p) <= tail) below += binomial_pmf(n, ci.lo++, p);
  double above = 0.0;
  while (ci.hi > 0 && above + binomial_pmf(n, ci.hi, p) <= tail) above += binomial_pmf(n, ci.hi--, p);
  return ci;
}

}  // namespace skb
