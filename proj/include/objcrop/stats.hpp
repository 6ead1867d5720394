#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace objcrop::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
inline double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

/// Normal-approximation 95% confidence half-width of the mean.
inline double ci95_half_width(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  return 1.959963984540054 * stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

/// P(X >= k) for X ~ Binomial(n, 1/2).
inline double binomial_upper_tail(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  // Sum in log space from k upward.
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  double acc = 0.0;
  for (std::size_t j = k; j <= n; ++j) {
    const double lc = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(j) + 1) -
                      std::lgamma(static_cast<double>(n - j) + 1);
    acc += std::exp(lc + log_half_n);
  }
  return std::min(acc, 1.0);
}

struct SignTest {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t ties = 0;
  double p_value = 1.0;  // one-sided: H1 says differences tend to be positive
};

/// One-sided paired sign test of a > b; ties are discarded.
inline SignTest sign_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("sign_test: unpaired samples");
  SignTest t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i])
      ++t.positive;
    else if (a[i] < b[i])
      ++t.negative;
    else
      ++t.ties;
  }
  t.p_value = binomial_upper_tail(t.positive, t.positive + t.negative);
  return t;
}

}  // namespace objcrop::stats
