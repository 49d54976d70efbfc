#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "his/coopgame.hpp"
#include "his/nn.hpp"
#include "his/rng.hpp"

namespace his {

// Centralized twin critics: each maps (state ++ joint action) -> scalar.
// Targets are shape-identical copies maintained by soft updates.
struct TwinCritics {
  nn::ParamSet q1, q2;
  nn::ParamSet q1_target, q2_target;

  int state_dim = 0;
  int num_agents = 0;
  int action_dim = 0;  // per agent

  int joint_action_dim() const { return num_agents * action_dim; }
};

inline TwinCritics make_critics(int state_dim, int num_agents, int action_dim,
                                std::span<const int> hidden, Rng& rng) {
  std::vector<int> dims;
  dims.push_back(state_dim + num_agents * action_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  TwinCritics c;
  c.q1 = nn::make_mlp(dims, nn::Activation::Identity, rng);
  c.q2 = nn::make_mlp(dims, nn::Activation::Identity, rng);
  c.q1_target = c.q1;
  c.q2_target = c.q2;
  c.state_dim = state_dim;
  c.num_agents = num_agents;
  c.action_dim = action_dim;
  return c;
}

struct Temperature {
  double log_alpha = std::log(0.2);
  bool auto_tune = true;
  double target_entropy = -1.0;  // nats, for the joint log-likelihood fed to the update

  double alpha() const { return std::exp(log_alpha); }
};

namespace detail {

inline std::vector<double> concat_state_action(std::span<const double> state,
                                               std::span<const double> joint_action) {
  std::vector<double> x;
  x.reserve(state.size() + joint_action.size());
  x.insert(x.end(), state.begin(), state.end());
  x.insert(x.end(), joint_action.begin(), joint_action.end());
  return x;
}

}  // namespace detail

inline double q_eval(const nn::ParamSet& q, std::span<const double> state,
                     std::span<const double> joint_action, nn::Tape* tape = nullptr) {
  const auto x = detail::concat_state_action(state, joint_action);
  return nn::forward(q, x, tape)[0];
}

inline double q_min(const nn::ParamSet& qa, const nn::ParamSet& qb,
                    std::span<const double> state, std::span<const double> joint_action) {
  return std::min(q_eval(qa, state, joint_action), q_eval(qb, state, joint_action));
}

inline double q_min_main(const TwinCritics& c, std::span<const double> state,
                         std::span<const double> joint_action) {
  return q_min(c.q1, c.q2, state, joint_action);
}

inline double q_min_target(const TwinCritics& c, std::span<const double> state,
                           std::span<const double> joint_action) {
  return q_min(c.q1_target, c.q2_target, state, joint_action);
}

// min over the two main critics plus d(min)/d(joint action), accumulated into
// action_grad (sized n * D). The gradient follows the critic attaining the
// min; ties go to q1.
inline double q_min_main_with_action_grad(const TwinCritics& c, std::span<const double> state,
                                          std::span<const double> joint_action,
                                          std::vector<double>& action_grad) {
  nn::Tape t1, t2;
  const double v1 = q_eval(c.q1, state, joint_action, &t1);
  const double v2 = q_eval(c.q2, state, joint_action, &t2);
  const nn::ParamSet& winner = (v1 <= v2) ? c.q1 : c.q2;
  const nn::Tape& tape = (v1 <= v2) ? t1 : t2;

  nn::ParamSet scratch = winner.zeros_like();  // parameter grads discarded here
  std::vector<double> input_grad;
  const double one[1] = {1.0};
  nn::backward(winner, tape, one, scratch, &input_grad);

  if (action_grad.size() != joint_action.size())
    throw std::invalid_argument("q_min_main_with_action_grad: action_grad size mismatch");
  for (std::size_t k = 0; k < joint_action.size(); ++k)
    action_grad[k] += input_grad[state.size() + k];
  return std::min(v1, v2);
}

// Entropy-regularized bootstrap target:
//   y = r                                                if terminal
//   y = r + gamma * (min Q_target(s', a') - alpha * sum_i log pi_i(a'_i))  otherwise
inline double td_target(const TwinCritics& c, const Temperature& temp, double r,
                        std::span<const double> next_state,
                        std::span<const double> next_joint_action,
                        std::span<const double> next_log_probs, double gamma, bool terminal) {
  if (terminal) return r;
  double entropy_term = 0.0;
  for (double lp : next_log_probs) entropy_term += lp;
  return r + gamma * (q_min_target(c, next_state, next_joint_action) -
                      temp.alpha() * entropy_term);
}

struct CriticUpdate {
  double loss = 0.0;  // mean over the batch of 0.5*(y - Q)^2, averaged over both critics
  nn::ParamSet g1, g2;
};

// Both critics regress toward the same targets; gradients are exact.
inline CriticUpdate critic_loss_and_grads(const TwinCritics& c,
                                          const std::vector<std::vector<double>>& states,
                                          const std::vector<std::vector<double>>& joint_actions,
                                          std::span<const double> targets) {
  const std::size_t batch = states.size();
  if (batch == 0 || joint_actions.size() != batch || targets.size() != batch)
    throw std::invalid_argument("critic_loss_and_grads: batch size mismatch");
  for (double y : targets)
    if (!std::isfinite(y)) throw std::invalid_argument("critic_loss_and_grads: non-finite target");

  CriticUpdate u;
  u.g1 = c.q1.zeros_like();
  u.g2 = c.q2.zeros_like();
  const double inv_b = 1.0 / static_cast<double>(batch);
  nn::Tape tape;
  for (std::size_t t = 0; t < batch; ++t) {
    const auto x = detail::concat_state_action(states[t], joint_actions[t]);
    for (int which = 0; which < 2; ++which) {
      const nn::ParamSet& q = (which == 0) ? c.q1 : c.q2;
      nn::ParamSet& g = (which == 0) ? u.g1 : u.g2;
      const double pred = nn::forward(q, x, &tape)[0];
      const double resid = pred - targets[t];
      u.loss += 0.5 * resid * resid * inv_b * 0.5;  // trailing 0.5 averages the two critics
      const double dl[1] = {resid * inv_b};
      nn::backward(q, tape, dl, g);
    }
  }
  return u;
}

// One ascent/descent step on J(alpha) = E[-alpha log pi - alpha H_bar],
// taken with respect to log_alpha. Stationary exactly when the batch mean of
// -log pi equals the entropy target.
inline Temperature temperature_step(Temperature temp, std::span<const double> batch_log_probs,
                                    double lr) {
  if (!temp.auto_tune) return temp;
  if (batch_log_probs.empty()) throw std::invalid_argument("temperature_step: empty batch");
  double mean_lp = 0.0;
  for (double lp : batch_log_probs) mean_lp += lp;
  mean_lp /= static_cast<double>(batch_log_probs.size());
  // dJ/d log_alpha = alpha * E[-log pi - H_bar]; descend on J
  const double grad = temp.alpha() * (-mean_lp - temp.target_entropy);
  temp.log_alpha -= lr * grad;
  return temp;
}

// Draws a coalition C subseteq N\{i} with probability |C|!(n-|C|-1)!/n! by
// taking the predecessors of i in a uniformly random ordering of all agents.
inline Coalition sample_coalition(Rng& rng, int n, int i) {
  if (n < 1 || i < 0 || i >= n) throw std::invalid_argument("sample_coalition: bad agent index");
  const std::vector<int> order = rng.permutation(n);
  Coalition c;
  for (int a : order) {
    if (a == i) break;
    c = c.with(a);
  }
  return c;
}

// Zeroes the action blocks of agents outside the coalition; member blocks keep
// their fixed positions (an MLP critic has no agent ordering to permute).
inline std::vector<double> mask_joint_action(std::span<const double> joint_action, Coalition c,
                                             int n, int action_dim) {
  if (joint_action.size() != static_cast<std::size_t>(n) * action_dim)
    throw std::invalid_argument("mask_joint_action: joint action size mismatch");
  std::vector<double> masked(joint_action.begin(), joint_action.end());
  for (int a = 0; a < n; ++a) {
    if (c.contains(a)) continue;
    for (int j = 0; j < action_dim; ++j)
      masked[static_cast<std::size_t>(a) * action_dim + j] = 0.0;
  }
  return masked;
}

// Half of the critic-measured marginal contribution of agent i joining C:
//   0.5 * [min Q(s, mask(a, C+{i})) - min Q(s, mask(a, C))]
// The half implements the hybrid split at the estimator level.
inline double amc_marginal(const TwinCritics& critics, std::span<const double> state,
                           std::span<const double> joint_action, Coalition c, int i) {
  if (c.contains(i)) throw std::invalid_argument("amc_marginal: agent already in coalition");
  const int n = critics.num_agents;
  const int d = critics.action_dim;
  const auto with_i = mask_joint_action(joint_action, c.with(i), n, d);
  const auto without_i = mask_joint_action(joint_action, c, n, d);
  return 0.5 * (q_min_main(critics, state, with_i) - q_min_main(critics, state, without_i));
}

// Monte-Carlo Shapley Q-value: average of M marginal contributions over
// coalitions drawn from the predecessor distribution. Used as a constant
// coefficient in the policy update (no gradient flows through it).
inline double shapley_q(const TwinCritics& critics, std::span<const double> state,
                        std::span<const double> joint_action, int i, int m_samples, Rng& rng) {
  if (m_samples < 1) throw std::invalid_argument("shapley_q: M >= 1 required");
  double acc = 0.0;
  for (int k = 0; k < m_samples; ++k) {
    const Coalition c = sample_coalition(rng, critics.num_agents, i);
    acc += amc_marginal(critics, state, joint_action, c, i);
  }
  return acc / static_cast<double>(m_samples);
}

// Exhaustive counterpart: the exact weighted sum over all coalitions of
// N\{i}. Diagnostic and oracle for the sampled estimator.
inline double shapley_q_exhaustive(const TwinCritics& critics, std::span<const double> state,
                                   std::span<const double> joint_action, int i) {
  const int n = critics.num_agents;
  if (n > kMaxAgents) throw std::domain_error("shapley_q_exhaustive: n too large");
  const std::uint32_t others = Coalition::grand(n).without(i).bits;
  double acc = 0.0;
  std::uint32_t c = others;
  while (true) {
    const Coalition coal{c};
    acc += coalition_weight(coal.size(), n) *
           amc_marginal(critics, state, joint_action, coal, i);
    if (c == 0) break;
    c = (c - 1) & others;
  }
  return acc;
}

}  // namespace his
