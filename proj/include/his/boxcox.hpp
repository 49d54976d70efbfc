#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "his/stats.hpp"

namespace his {

// Lambda magnitudes at or below this use the log branch, so the grid's exact
// zero always lands on it.
inline constexpr double kBoxCoxLambdaEps = 1e-8;

struct BoxCoxFit {
  double lambda = 1.0;
  double x_min = 0.0;
  double shift = 1e-6;  // the small positive constant keeping x - x_min + shift > 0
};

struct BoxCoxGrid {
  double lo = -2.0;
  double hi = 2.0;
  double step = 0.05;
};

// (x^l - 1)/l for l != 0, log x at l = 0.
inline double bc_transform(double x, double lambda) {
  if (x <= 0.0) throw std::domain_error("bc_transform: requires x > 0 (use the shifted form)");
  if (std::fabs(lambda) <= kBoxCoxLambdaEps) return std::log(x);
  return (std::pow(x, lambda) - 1.0) / lambda;
}

// Negative-data form: the transform applied to (x - x_min + shift).
inline double bc_transform_shifted(double x, const BoxCoxFit& fit) {
  const double y = x - fit.x_min + fit.shift;
  if (y <= 0.0) throw std::domain_error("bc_transform_shifted: x - x_min + shift must be > 0");
  if (std::fabs(fit.lambda) <= kBoxCoxLambdaEps) return std::log(y);
  return (std::pow(y, fit.lambda) - 1.0) / fit.lambda;
}

// d/dx of bc_transform_shifted, y^(lambda-1) with y = x - x_min + shift.
// Strictly positive on the domain, which is what makes the transform
// order-preserving.
inline double bc_transform_shifted_derivative(double x, const BoxCoxFit& fit) {
  const double y = x - fit.x_min + fit.shift;
  if (y <= 0.0) throw std::domain_error("bc_transform_shifted_derivative: out of domain");
  if (std::fabs(fit.lambda) <= kBoxCoxLambdaEps) return 1.0 / y;
  return std::pow(y, fit.lambda - 1.0);
}

// Profile-likelihood grid fit. Maximizes
//   L(l) = -(m/2) log Var[BC_l(x)] + (l - 1) sum log(x - x_min + shift)
// over the lambda grid; ties break toward the lambda closest to 1.
inline BoxCoxFit estimate_lambda(std::span<const double> data,
                                 const BoxCoxGrid& grid = {}) {
  if (data.size() < 2) throw std::invalid_argument("estimate_lambda: need at least 2 points");

  BoxCoxFit fit;
  fit.x_min = data[0];
  double x_max = data[0];
  for (double x : data) {
    fit.x_min = std::min(fit.x_min, x);
    x_max = std::max(x_max, x);
  }
  if (x_max == fit.x_min) throw std::invalid_argument("estimate_lambda: constant input");
  fit.shift = 1e-4 * std::max(1.0, std::fabs(fit.x_min)) + 1e-6;

  double log_sum = 0.0;
  for (double x : data) log_sum += std::log(x - fit.x_min + fit.shift);

  const int steps = static_cast<int>(std::lround((grid.hi - grid.lo) / grid.step));
  const auto m = static_cast<double>(data.size());
  std::vector<double> transformed(data.size());

  double best_ll = -std::numeric_limits<double>::infinity();
  double best_lambda = 1.0;
  bool have_best = false;
  for (int k = 0; k <= steps; ++k) {
    // anchored so a symmetric grid hits 0 exactly
    const double lambda = grid.lo + static_cast<double>(k) * grid.step;
    BoxCoxFit trial = fit;
    trial.lambda = lambda;
    for (std::size_t j = 0; j < data.size(); ++j)
      transformed[j] = bc_transform_shifted(data[j], trial);
    const double var = stats::variance(transformed);
    if (!(var > 0.0) || !std::isfinite(var)) continue;
    const double ll = -0.5 * m * std::log(var) + (lambda - 1.0) * log_sum;
    if (!std::isfinite(ll)) continue;
    if (!have_best || ll > best_ll ||
        (ll == best_ll && std::fabs(lambda - 1.0) < std::fabs(best_lambda - 1.0))) {
      have_best = true;
      best_ll = ll;
      best_lambda = lambda;
    }
  }
  if (!have_best) throw std::invalid_argument("estimate_lambda: no usable lambda on the grid");
  fit.lambda = best_lambda;
  return fit;
}

// Training-time pathway: fit on the batch, transform, and add x_min back to
// every output to keep the result near the original scale. Order-preserving.
inline std::vector<double> bc_training_transform(std::span<const double> values,
                                                 const BoxCoxGrid& grid = {}) {
  const BoxCoxFit fit = estimate_lambda(values, grid);
  std::vector<double> out(values.size());
  for (std::size_t j = 0; j < values.size(); ++j)
    out[j] = bc_transform_shifted(values[j], fit) + fit.x_min;
  return out;
}

}  // namespace his
