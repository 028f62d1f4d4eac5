#pragma once

/**
 * Beta-distribution kernels: regularized incomplete beta via the textbook
 * continued fraction (modified Lentz), its quantile via bracketed bisection,
 * and the Clopper-Pearson lower confidence bound built on top. Plus the
 * Kolmogorov-Smirnov distance used by the distribution tests.
 */

#include <math.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace conbeam::stats {

// lgamma() writes the signgam global; the reentrant form keeps concurrent
// calibrations race-free. All arguments here are positive.
inline double log_gamma(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

inline double log_beta(double a, double b) {
  return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

namespace detail {

// Continued fraction for the incomplete beta function, modified Lentz.
inline double beta_continued_fraction(double x, double a, double b) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  constexpr int max_terms = 200000;

  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double result = d;

  for (int m = 1; m <= max_terms; ++m) {
    const double dm = static_cast<double>(m);
    // even term
    double numer = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
    d = 1.0 + numer * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + numer / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    result *= d * c;
    // odd term
    numer = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
    d = 1.0 + numer * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + numer / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double mult = d * c;
    result *= mult;
    if (std::abs(mult - 1.0) < eps) break;
  }
  return result;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b): the Beta(a, b) CDF at x.
inline double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("regularized_incomplete_beta: a, b must be positive");
  if (!(x >= 0.0 && x <= 1.0))
    throw std::invalid_argument("regularized_incomplete_beta: x must be in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
  // Use the symmetric form on whichever side converges fast.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(x, a, b) / a;
  return 1.0 - front * detail::beta_continued_fraction(1.0 - x, b, a) / b;
}

/// delta-quantile of Beta(a, b): the q with I_q(a, b) = delta, solved by
/// bisection on the monotone CDF to |I_q - delta| <= 1e-10.
inline double beta_quantile(double delta, double a, double b) {
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("beta_quantile: delta must be in (0,1)");
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("beta_quantile: a, b must be positive");
  double lo = 0.0, hi = 1.0;
  double mid = 0.5;
  for (int iter = 0; iter < 200; ++iter) {
    mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    const double f = regularized_incomplete_beta(mid, a, b);
    if (f < delta)
      lo = mid;
    else
      hi = mid;
  }
  return mid;
}

/// Clopper-Pearson lower confidence bound at risk delta for `successes` out of
/// `trials` binomial draws. Zero successes give a zero bound.
inline double clopper_pearson_lower(int successes, int trials, double delta) {
  if (trials < 1) throw std::invalid_argument("clopper_pearson_lower: trials must be >= 1");
  if (successes < 0 || successes > trials)
    throw std::invalid_argument("clopper_pearson_lower: successes out of range");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("clopper_pearson_lower: delta must be in (0,1)");
  if (successes == 0) return 0.0;
  return beta_quantile(delta, static_cast<double>(successes),
                       static_cast<double>(trials + 1 - successes));
}

/// Kolmogorov-Smirnov distance between a sample and a reference CDF.
inline double ks_distance(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_distance: empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double dist = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    dist = std::max(dist, std::abs(static_cast<double>(i + 1) / n - f));
    dist = std::max(dist, std::abs(static_cast<double>(i) / n - f));
  }
  return dist;
}

/// Sample mean.
inline double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean: empty input");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
inline double sample_stddev(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("sample_stddev: empty input");
  if (values.size() == 1) return 0.0;
  const double m = mean(values);
  double sq = 0.0;
  for (double v : values) sq += (v - m) * (v - m);
  return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

}  // namespace conbeam::stats
