#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace rime::stats {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Mann-Whitney U of x against y: pairs with x > y, ties counted one half.
inline double mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
  double u = 0.0;
  for (double a : x)
    for (double b : y) u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return u;
}

/// One-sided p-value for H1: x tends to exceed y. Exact over all relabelings of
/// the pooled sample when that is affordable, normal approximation otherwise.
inline double rank_test_greater(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size(), m = y.size();
  if (n == 0 || m == 0) throw std::invalid_argument("rank test needs two non-empty samples");
  const double observed = mann_whitney_u(x, y);

  double combos = 1.0;
  for (std::size_t i = 0; i < n; ++i) combos = combos * static_cast<double>(m + n - i) / static_cast<double>(i + 1);
  if (combos <= 2e6) {
    std::vector<double> pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::vector<bool> pick(n + m, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n), true);
    std::uint64_t total = 0, extreme = 0;
    std::vector<double> a, b;
    do {
      a.clear();
      b.clear();
      for (std::size_t i = 0; i < pooled.size(); ++i) (pick[i] ? a : b).push_back(pooled[i]);
      ++total;
      if (mann_whitney_u(a, b) >= observed - 1e-9) ++extreme;
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return static_cast<double>(extreme) / static_cast<double>(total);
  }
  const double mu = 0.5 * static_cast<double>(n * m);
  const double sigma = std::sqrt(static_cast<double>(n * m * (n + m + 1)) / 12.0);
  const double z = (observed - 0.5 - mu) / sigma;
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

struct BinomialEstimate {
  std::size_t successes = 0;
  std::size_t trials = 0;
  double rate = 0.0;
  double lower = 0.0;  // rate +/- z sigma, sigma from the empirical rate
  double upper = 0.0;
};

inline BinomialEstimate binomial_estimate(std::size_t successes, std::size_t trials, double z = 3.0) {
  BinomialEstimate e{successes, trials};
  if (trials == 0) return e;
  e.rate = static_cast<double>(successes) / static_cast<double>(trials);
  const double half = z * std::sqrt(e.rate * (1.0 - e.rate) / static_cast<double>(trials));
  e.lower = std::max(0.0, e.rate - half);
  e.upper = std::min(1.0, e.rate + half);
  return e;
}

/// True when `rate` lies within z standard errors of p for n trials.
inline bool within_binomial_ci(double rate, double p, std::size_t n, double z = 3.0) {
  const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return std::abs(rate - p) <= z * sigma;
}

}  // namespace rime::stats
