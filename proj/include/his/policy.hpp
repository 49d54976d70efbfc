#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "his/nn.hpp"
#include "his/rng.hpp"

namespace his {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kAtanhClamp = 1e-6;  // stored actions clamped to +-(1 - this)

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Squashed diagonal-Gaussian policy: the network maps an observation to
// [mu | log_sigma] (2 * action_dim outputs); actions are tanh(mu + sigma * eps).
struct GaussianPolicy {
  nn::ParamSet net;
  int action_dim = 0;
};

inline GaussianPolicy make_policy(int obs_dim, int action_dim, std::span<const int> hidden,
                                  Rng& rng) {
  std::vector<int> dims;
  dims.push_back(obs_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2 * action_dim);
  GaussianPolicy p;
  p.net = nn::make_mlp(dims, nn::Activation::Identity, rng);
  p.action_dim = action_dim;
  return p;
}

// One head evaluation: clamped (mu, log_sigma) plus the tape needed to push
// gradients back through the network.
struct PolicyHead {
  std::vector<double> mu;
  std::vector<double> log_sigma;  // clamped to [kLogStdMin, kLogStdMax]
  std::vector<double> sigma;
  std::vector<bool> clamped;  // where the clamp is active the log_sigma gradient is zero
  nn::Tape tape;
};

inline PolicyHead eval_head(const GaussianPolicy& policy, std::span<const double> obs) {
  PolicyHead h;
  const std::vector<double> out = nn::forward(policy.net, obs, &h.tape);
  const int d = policy.action_dim;
  if (static_cast<int>(out.size()) != 2 * d)
    throw std::invalid_argument("eval_head: network output must be 2 * action_dim");
  h.mu.assign(out.begin(), out.begin() + d);
  h.log_sigma.resize(static_cast<std::size_t>(d));
  h.sigma.resize(static_cast<std::size_t>(d));
  h.clamped.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    const double raw = out[static_cast<std::size_t>(d + j)];
    const double cl = std::min(kLogStdMax, std::max(kLogStdMin, raw));
    h.log_sigma[static_cast<std::size_t>(j)] = cl;
    h.sigma[static_cast<std::size_t>(j)] = std::exp(cl);
    h.clamped[static_cast<std::size_t>(j)] = (cl != raw);
  }
  return h;
}

struct PolicySample {
  std::vector<double> action;      // tanh-squashed, strictly inside (-1, 1)^D
  std::vector<double> pre_squash;  // mu + sigma * noise
  std::vector<double> noise;       // the standard-normal draw, kept for reparameterized grads
  double log_prob = 0.0;
};

namespace detail {

inline constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log(sqrt(2*pi))

// log-density of the squashed sample given the head and the noise that
// produced it:
//   log N(u; mu, sigma) - sum_j 2*(log 2 - u_j - softplus(-2 u_j))
inline double squashed_log_prob_from_noise(const PolicyHead& h, std::span<const double> noise,
                                           std::span<const double> pre_squash) {
  double lp = 0.0;
  for (std::size_t j = 0; j < h.mu.size(); ++j) {
    lp += -0.5 * noise[j] * noise[j] - h.log_sigma[j] - kLogSqrt2Pi;
    const double u = pre_squash[j];
    lp -= 2.0 * (std::log(2.0) - u - softplus(-2.0 * u));
  }
  return lp;
}

}  // namespace detail

// Deterministic re-evaluation for a fixed noise vector; sample() draws the
// noise and delegates here.
inline PolicySample sample_with_noise(const PolicyHead& h, std::span<const double> noise) {
  PolicySample s;
  const std::size_t d = h.mu.size();
  if (noise.size() != d) throw std::invalid_argument("sample_with_noise: noise size mismatch");
  s.noise.assign(noise.begin(), noise.end());
  s.pre_squash.resize(d);
  s.action.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    s.pre_squash[j] = h.mu[j] + h.sigma[j] * noise[j];
    s.action[j] = std::tanh(s.pre_squash[j]);
  }
  s.log_prob = detail::squashed_log_prob_from_noise(h, s.noise, s.pre_squash);
  return s;
}

inline PolicySample sample(const GaussianPolicy& policy, std::span<const double> obs, Rng& rng) {
  const PolicyHead h = eval_head(policy, obs);
  std::vector<double> noise(static_cast<std::size_t>(policy.action_dim));
  for (auto& e : noise) e = rng.normal();
  return sample_with_noise(h, noise);
}

// Inverse of the squash for replayed actions, 0.5*log((1+a)/(1-a)) after
// clamping a away from the saturation points.
inline std::vector<double> atanh_recover(std::span<const double> action) {
  std::vector<double> u(action.size());
  for (std::size_t j = 0; j < action.size(); ++j) {
    const double a = std::min(1.0 - kAtanhClamp, std::max(-1.0 + kAtanhClamp, action[j]));
    u[j] = 0.5 * std::log((1.0 + a) / (1.0 - a));
  }
  return u;
}

// Log-likelihood of a stored (replayed) action under the current policy.
inline double historical_log_prob_from_head(const PolicyHead& h,
                                            std::span<const double> u_stored) {
  if (u_stored.size() != h.mu.size())
    throw std::invalid_argument("historical_log_prob: dimension mismatch");
  double lp = 0.0;
  for (std::size_t j = 0; j < h.mu.size(); ++j) {
    const double z = (u_stored[j] - h.mu[j]) / h.sigma[j];
    lp += -0.5 * z * z - h.log_sigma[j] - detail::kLogSqrt2Pi;
    lp -= 2.0 * (std::log(2.0) - u_stored[j] - softplus(-2.0 * u_stored[j]));
  }
  return lp;
}

inline double historical_log_prob(const GaussianPolicy& policy, std::span<const double> obs,
                                  std::span<const double> stored_action) {
  const PolicyHead h = eval_head(policy, obs);
  const std::vector<double> u = atanh_recover(stored_action);
  return historical_log_prob_from_head(h, u);
}

// Soft floor on a batch of log-likelihoods: values below
// T_limit = max - beta are mapped to T_limit + exp(v - T_limit) - 1, which
// joins continuously at the threshold and preserves ordering.
inline std::vector<double> apply_likelihood_floor(std::span<const double> batch_logf,
                                                  double beta) {
  if (batch_logf.empty()) throw std::invalid_argument("apply_likelihood_floor: empty batch");
  if (!(beta > 0.0)) throw std::invalid_argument("apply_likelihood_floor: beta > 0 required");
  double mx = batch_logf[0];
  for (double v : batch_logf) mx = std::max(mx, v);
  const double t_limit = mx - beta;
  std::vector<double> out(batch_logf.size());
  for (std::size_t k = 0; k < batch_logf.size(); ++k) {
    const double v = batch_logf[k];
    out[k] = (v < t_limit) ? t_limit + std::exp(v - t_limit) - 1.0 : v;
  }
  return out;
}

// d out/d v of the floor map at fixed threshold: 1 above, exp(v - T) below.
inline double likelihood_floor_derivative(double v, double t_limit) {
  return (v < t_limit) ? std::exp(v - t_limit) : 1.0;
}

// ---- gradient assembly -----------------------------------------------------
// Each helper builds the [d/d mu | d/d log_sigma] output gradient and pushes
// it through the tape; clamped log_sigma components contribute nothing.

namespace detail {

inline void push_head_grad(const GaussianPolicy& policy, const PolicyHead& h,
                           std::span<const double> dmu, std::span<const double> dlogsig,
                           nn::ParamSet& grads) {
  const std::size_t d = h.mu.size();
  std::vector<double> out_grad(2 * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    out_grad[j] = dmu[j];
    out_grad[d + j] = h.clamped[j] ? 0.0 : dlogsig[j];
  }
  nn::backward(policy.net, h.tape, out_grad, grads);
}

}  // namespace detail

// coeff * d log_prob(sample)/d theta for the reparameterized sample
// (mu, log_sigma differentiable, noise held fixed):
//   d lp/d mu_j        = 2 tanh(u_j)
//   d lp/d log_sigma_j = -1 + 2 tanh(u_j) sigma_j eps_j
inline void accumulate_sample_logp_grad(const GaussianPolicy& policy, const PolicyHead& h,
                                        const PolicySample& s, double coeff,
                                        nn::ParamSet& grads) {
  const std::size_t d = h.mu.size();
  std::vector<double> dmu(d), dls(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double tu = std::tanh(s.pre_squash[j]);
    dmu[j] = coeff * 2.0 * tu;
    dls[j] = coeff * (-1.0 + 2.0 * tu * h.sigma[j] * s.noise[j]);
  }
  detail::push_head_grad(policy, h, dmu, dls, grads);
}

// sum_j action_grad[j] * d a_j/d theta for a = tanh(mu + sigma * eps):
//   d a_j/d mu_j        = 1 - a_j^2
//   d a_j/d log_sigma_j = (1 - a_j^2) sigma_j eps_j
inline void accumulate_sample_action_grad(const GaussianPolicy& policy, const PolicyHead& h,
                                          const PolicySample& s,
                                          std::span<const double> action_grad,
                                          nn::ParamSet& grads) {
  const std::size_t d = h.mu.size();
  std::vector<double> dmu(d), dls(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double sech2 = 1.0 - s.action[j] * s.action[j];
    dmu[j] = action_grad[j] * sech2;
    dls[j] = action_grad[j] * sech2 * h.sigma[j] * s.noise[j];
  }
  detail::push_head_grad(policy, h, dmu, dls, grads);
}

// coeff * d historical_log_prob/d theta for a fixed recovered pre-squash u:
//   d lp/d mu_j        = (u_j - mu_j)/sigma_j^2
//   d lp/d log_sigma_j = ((u_j - mu_j)/sigma_j)^2 - 1
inline void accumulate_historical_logp_grad(const GaussianPolicy& policy, const PolicyHead& h,
                                            std::span<const double> u_stored, double coeff,
                                            nn::ParamSet& grads) {
  const std::size_t d = h.mu.size();
  std::vector<double> dmu(d), dls(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double z = (u_stored[j] - h.mu[j]) / h.sigma[j];
    dmu[j] = coeff * z / h.sigma[j];
    dls[j] = coeff * (z * z - 1.0);
  }
  detail::push_head_grad(policy, h, dmu, dls, grads);
}

}  // namespace his
