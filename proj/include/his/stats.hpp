#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace his::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty range");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// population variance (divides by m, matching the profile-likelihood use)
inline double variance(std::span<const double> xs) {
  const double mu = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return s / static_cast<double>(xs.size());
}

inline double stddev(std::span<const double> xs) { return std::sqrt(variance(xs)); }

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median of empty range");
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

// moment skewness m3 / m2^(3/2); 0 for (near-)constant input
inline double skewness(std::span<const double> xs) {
  const double mu = mean(xs);
  double m2 = 0.0, m3 = 0.0;
  for (double x : xs) {
    const double d = x - mu;
    m2 += d * d;
    m3 += d * d * d;
  }
  const auto m = static_cast<double>(xs.size());
  m2 /= m;
  m3 /= m;
  if (m2 <= 1e-300) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

namespace detail {

// Regularized lower incomplete gamma P(a, x), series expansion (x < a+1).
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x), continued fraction (x >= a+1).
inline double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

// Q(a, x) = 1 - P(a, x)
inline double gamma_q(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::domain_error("gamma_q: a > 0 and x >= 0 required");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_cf(a, x);
}

// Survival function of the chi-square distribution with k degrees of freedom.
inline double chi_square_sf(double x, int dof) {
  if (dof < 1) throw std::invalid_argument("chi_square_sf: dof >= 1");
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * static_cast<double>(dof), 0.5 * x);
}

// Pearson chi-square statistic and p-value for observed counts vs expected
// probabilities (dof = cells - 1).
struct ChiSquareResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int dof = 0;
};

inline ChiSquareResult chi_square_test(std::span<const std::int64_t> observed,
                                       std::span<const double> expected_prob,
                                       std::int64_t total) {
  if (observed.size() != expected_prob.size() || observed.size() < 2)
    throw std::invalid_argument("chi_square_test: need >= 2 matching cells");
  ChiSquareResult r;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double e = expected_prob[k] * static_cast<double>(total);
    if (e <= 0.0) throw std::invalid_argument("chi_square_test: nonpositive expected count");
    const double d = static_cast<double>(observed[k]) - e;
    r.statistic += d * d / e;
  }
  r.dof = static_cast<int>(observed.size()) - 1;
  r.p_value = chi_square_sf(r.statistic, r.dof);
  return r;
}

// Asymptotic Kolmogorov survival function Q_KS(lambda) = 2 sum (-1)^{j-1} e^{-2 j^2 lambda^2}.
inline double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::min(1.0, std::max(0.0, 2.0 * sum));
}

// One-sample KS test p-value against a caller-supplied CDF.
template <typename Cdf>
double ks_test_pvalue(std::vector<double> sample, Cdf cdf) {
  if (sample.size() < 2) throw std::invalid_argument("ks_test: need >= 2 samples");
  std::sort(sample.begin(), sample.end());
  const auto n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    d = std::max(d, std::max(std::fabs(f - lo), std::fabs(hi - f)));
  }
  const double sn = std::sqrt(n);
  return kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
}

}  // namespace his::stats
