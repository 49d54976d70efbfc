#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "his/boxcox.hpp"
#include "his/config.hpp"
#include "his/envs.hpp"
#include "his/nn.hpp"
#include "his/policy.hpp"
#include "his/replay.hpp"
#include "his/rng.hpp"
#include "his/stats.hpp"
#include "his/valuation.hpp"

namespace his {

inline std::unique_ptr<Env> make_env(const RunConfig& cfg) {
  std::unique_ptr<Env> env;
  if (cfg.env == "quad_coupled") {
    Rng structure(cfg.env_seed);
    env = make_quad_coupled(cfg.n, cfg.action_dim, cfg.quad_out_dim, cfg.quad_offset,
                            cfg.steps_per_episode, structure);
  } else if (cfg.env == "spread_mini") {
    if (cfg.action_dim != 2) throw ConfigError(0, "spread_mini requires action_dim = 2");
    env = std::make_unique<SpreadMiniEnv>(cfg.n, cfg.spread_landmarks, cfg.steps_per_episode);
  } else {
    throw ConfigError(0, "unknown env '" + cfg.env + "'");
  }
  if (cfg.dummy_agent >= 0) env = std::make_unique<DummyAgentEnv>(std::move(env), cfg.dummy_agent);
  return env;
}

struct MetricsRow {
  long step = 0;
  long episodes = 0;
  double ret_mean = 0.0;
  double ret_std = 0.0;
  double critic_loss = 0.0;
  double alpha = 0.0;
  std::vector<double> shapley_q_mean;  // one entry per agent
  double bc_loglik_mean = 0.0;
};

inline std::string metrics_csv_header(int n) {
  std::string h = "step,episodes,ret_mean,ret_std,critic_loss,alpha";
  for (int i = 0; i < n; ++i) h += ",shapley_q_mean_agent" + std::to_string(i);
  h += ",bc_loglik_mean";
  return h;
}

namespace detail {

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

inline std::string metrics_csv_row(const MetricsRow& r) {
  std::string line = std::to_string(r.step) + "," + std::to_string(r.episodes) + "," +
                     detail::fmt_g(r.ret_mean) + "," + detail::fmt_g(r.ret_std) + "," +
                     detail::fmt_g(r.critic_loss) + "," + detail::fmt_g(r.alpha);
  for (double s : r.shapley_q_mean) line += "," + detail::fmt_g(s);
  line += "," + detail::fmt_g(r.bc_loglik_mean);
  return line;
}

// Multi-step bootstrap target over a stored trajectory segment:
//   y = sum_{k<m} gamma^k r_k + gamma^m (min Q_target(s_m, a') - alpha sum_i log pi_i(a'_i))
// with m = segment length; the entropy correction enters only at the
// bootstrap step, and a terminal inside the window drops the bootstrap
// entirely. Reduces to the one-step target at n_step = 1.
inline double n_step_target(std::span<const Transition* const> segment, const TwinCritics& critics,
                            const Temperature& temp,
                            const std::vector<GaussianPolicy>& policies, double gamma,
                            Rng& rng) {
  if (segment.empty()) throw std::invalid_argument("n_step_target: empty segment");
  double y = 0.0;
  double discount = 1.0;
  for (const Transition* t : segment) {
    y += discount * t->reward;
    discount *= gamma;
  }
  const Transition& last = *segment.back();
  if (last.terminal) return y;

  std::vector<double> next_action;
  next_action.reserve(policies.size() * static_cast<std::size_t>(policies[0].action_dim));
  double logp_sum = 0.0;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const PolicySample s = sample(policies[i], last.next_obs[i], rng);
    next_action.insert(next_action.end(), s.action.begin(), s.action.end());
    logp_sum += s.log_prob;
  }
  y += discount *
       (q_min_target(critics, last.next_state, next_action) - temp.alpha() * logp_sum);
  return y;
}

struct RunSummary {
  long total_steps = 0;
  long episodes = 0;
  double final_ret_mean = 0.0;
  double final_ret_std = 0.0;
  double final_alpha = 0.0;
  double wall_seconds = 0.0;
  long skipped_agent_updates = 0;
};

// Owns all mutable training state and drives the update cycle:
// collect -> critic targets -> critic step -> randomized sequential policy
// updates -> temperature -> target soft update.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_(std::move(cfg)), rng_(cfg_.seed), env_(make_env(cfg_)), buffer_(cfg_.buffer_capacity) {
    cfg_.validate();
    const int obs_dim = env_->obs_dim();
    const int state_dim = env_->state_dim();
    for (int i = 0; i < cfg_.n; ++i) {
      policies_.push_back(make_policy(obs_dim, cfg_.action_dim, cfg_.hidden, rng_));
      policy_optims_.push_back(nn::make_optim(policies_.back().net, cfg_.lr_actor));
    }
    critics_ = make_critics(state_dim, cfg_.n, cfg_.action_dim, cfg_.hidden, rng_);
    critic_optim1_ = nn::make_optim(critics_.q1, cfg_.lr_critic);
    critic_optim2_ = nn::make_optim(critics_.q2, cfg_.lr_critic);
    temp_.auto_tune = cfg_.auto_alpha;
    temp_.log_alpha = std::log(cfg_.auto_alpha ? cfg_.alpha_init : cfg_.fixed_alpha);
    temp_.target_entropy = cfg_.effective_target_entropy();
    grid_.lo = cfg_.lambda_grid_lo;
    grid_.hi = cfg_.lambda_grid_hi;
  }

  const RunConfig& config() const { return cfg_; }
  Env& env() { return *env_; }
  const std::vector<GaussianPolicy>& policies() const { return policies_; }
  std::vector<GaussianPolicy>& policies() { return policies_; }
  const TwinCritics& critics() const { return critics_; }
  TwinCritics& critics() { return critics_; }
  const Temperature& temperature() const { return temp_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long env_steps() const { return env_steps_; }
  long episodes_done() const { return episodes_done_; }
  long skipped_agent_updates() const { return skipped_agent_updates_; }
  long shapley_q_calls() const { return shapley_q_calls_; }
  bool finished() const { return env_steps_ >= cfg_.total_steps(); }

  // Appends exactly `steps` transitions; uniform actions during warmup,
  // policy samples afterwards.
  void collect(int steps) {
    for (int k = 0; k < steps; ++k) {
      if (episode_step_ == 0) {
        env_->reset(rng_);
        episode_return_ = 0.0;
        cached_obs_ = gather_obs();
      }
      Transition t;
      t.obs = cached_obs_;
      t.state = env_->state();
      t.joint_action.resize(static_cast<std::size_t>(cfg_.n) * cfg_.action_dim);
      const bool warmup = env_steps_ < cfg_.warmup_steps;
      for (int i = 0; i < cfg_.n; ++i) {
        if (warmup) {
          for (int j = 0; j < cfg_.action_dim; ++j)
            t.joint_action[static_cast<std::size_t>(i * cfg_.action_dim + j)] =
                rng_.uniform(-1.0, 1.0);
        } else {
          PolicySample s = sample(policies_[static_cast<std::size_t>(i)], t.obs[static_cast<std::size_t>(i)], rng_);
          for (int j = 0; j < cfg_.action_dim; ++j) {
            double a = s.action[static_cast<std::size_t>(j)];
            if (cfg_.exploration_noise > 0.0) a += cfg_.exploration_noise * rng_.normal();
            t.joint_action[static_cast<std::size_t>(i * cfg_.action_dim + j)] = a;
          }
        }
      }
      for (auto& a : t.joint_action)
        a = std::min(1.0 - kAtanhClamp, std::max(-1.0 + kAtanhClamp, a));

      bool terminal = false;
      t.reward = env_->step(t.joint_action, &terminal);
      t.terminal = terminal;
      t.episode = episode_id_;
      t.next_obs = gather_obs();
      t.next_state = env_->state();
      episode_return_ += t.reward;

      cached_obs_ = t.next_obs;
      buffer_.push(std::move(t));
      ++env_steps_;
      ++episode_step_;
      if (terminal || episode_step_ >= cfg_.steps_per_episode) {
        window_returns_.push_back(episode_return_);
        ++episodes_done_;
        ++episode_id_;
        episode_step_ = 0;
      }
    }
  }

  // One full cycle; emits one metrics record.
  MetricsRow train_iteration() {
    collect(cfg_.train_interval);

    MetricsRow row;
    row.shapley_q_mean.assign(static_cast<std::size_t>(cfg_.n), 0.0);
    const bool can_update = env_steps_ >= cfg_.warmup_steps &&
                            buffer_.size() >= static_cast<std::size_t>(cfg_.batch_size);
    double critic_loss_acc = 0.0;
    int updates_done = 0;
    if (can_update) {
      for (int u = 0; u < cfg_.updates_per_train; ++u) {
        const std::vector<std::int64_t> batch = sample_batch_ids();
        critic_loss_acc += critic_update(batch);
        policy_update_sequential(batch, row);
        if (temp_.auto_tune) temperature_update(batch);
        const double w_main = cfg_.literal_polyak ? 1.0 - cfg_.tau : cfg_.tau;
        nn::soft_update(critics_.q1_target, critics_.q1, w_main);
        nn::soft_update(critics_.q2_target, critics_.q2, w_main);
        ++updates_done;
      }
    }

    row.step = env_steps_;
    row.episodes = episodes_done_;
    if (!window_returns_.empty()) {
      last_ret_mean_ = stats::mean(window_returns_);
      last_ret_std_ = window_returns_.size() > 1 ? stats::stddev(window_returns_) : 0.0;
      window_returns_.clear();
    }
    row.ret_mean = last_ret_mean_;
    row.ret_std = last_ret_std_;
    row.critic_loss = updates_done > 0 ? critic_loss_acc / updates_done : 0.0;
    row.alpha = temp_.alpha();
    return row;
  }

  // Post-training diagnostic: mean |exhaustive Shapley Q| per agent over a
  // batch of stored transitions.
  std::vector<double> shapley_magnitude_profile(int max_samples, Rng& rng) const {
    if (buffer_.size() == 0) throw std::logic_error("shapley_magnitude_profile: empty buffer");
    std::vector<double> acc(static_cast<std::size_t>(cfg_.n), 0.0);
    const int count = std::min<int>(max_samples, static_cast<int>(buffer_.size()));
    for (int k = 0; k < count; ++k) {
      const Transition& t = buffer_.get(buffer_.sample_id(rng));
      for (int i = 0; i < cfg_.n; ++i)
        acc[static_cast<std::size_t>(i)] +=
            std::fabs(shapley_q_exhaustive(critics_, t.state, t.joint_action, i));
    }
    for (auto& a : acc) a /= static_cast<double>(count);
    return acc;
  }

  std::vector<std::int64_t> sample_batch_ids() {
    std::vector<std::int64_t> ids(static_cast<std::size_t>(cfg_.batch_size));
    for (auto& id : ids) id = buffer_.sample_id(rng_);
    return ids;
  }

  nlohmann::json checkpoint_json() const {
    nlohmann::json pols = nlohmann::json::array();
    for (const auto& p : policies_) pols.push_back(nn::to_json(p.net));
    return nlohmann::json{{"format_version", nn::kCheckpointVersion},
                          {"policies", pols},
                          {"q1", nn::to_json(critics_.q1)},
                          {"q2", nn::to_json(critics_.q2)},
                          {"q1_target", nn::to_json(critics_.q1_target)},
                          {"q2_target", nn::to_json(critics_.q2_target)},
                          {"log_alpha", temp_.log_alpha},
                          {"env_steps", env_steps_}};
  }

  void restore_checkpoint(const nlohmann::json& j) {
    const auto& pols = j.at("policies");
    if (pols.size() != policies_.size())
      throw std::invalid_argument("checkpoint: policy count mismatch");
    for (std::size_t i = 0; i < policies_.size(); ++i)
      policies_[i].net = nn::paramset_from_json(pols[i]);
    critics_.q1 = nn::paramset_from_json(j.at("q1"));
    critics_.q2 = nn::paramset_from_json(j.at("q2"));
    critics_.q1_target = nn::paramset_from_json(j.at("q1_target"));
    critics_.q2_target = nn::paramset_from_json(j.at("q2_target"));
    temp_.log_alpha = j.at("log_alpha").get<double>();
  }

 private:
  std::vector<std::vector<double>> gather_obs() const {
    std::vector<std::vector<double>> obs;
    obs.reserve(static_cast<std::size_t>(cfg_.n));
    for (int i = 0; i < cfg_.n; ++i) obs.push_back(env_->observation(i));
    return obs;
  }

  double critic_update(const std::vector<std::int64_t>& batch) {
    std::vector<std::vector<double>> states, actions;
    std::vector<double> targets;
    states.reserve(batch.size());
    actions.reserve(batch.size());
    targets.reserve(batch.size());
    for (const auto id : batch) {
      const auto segment = buffer_.segment(id, cfg_.n_step);
      targets.push_back(
          n_step_target(segment, critics_, temp_, policies_, cfg_.gamma, rng_));
      const Transition& head = *segment.front();
      states.push_back(head.state);
      actions.push_back(head.joint_action);
    }
    CriticUpdate u = critic_loss_and_grads(critics_, states, actions, targets);
    clip_grads(u.g1);
    clip_grads(u.g2);
    nn::adam_step(critics_.q1, u.g1, critic_optim1_);
    nn::adam_step(critics_.q2, u.g2, critic_optim2_);
    return u.loss;
  }

  void clip_grads(nn::ParamSet& g) const {
    if (cfg_.grad_clip <= 0.0) return;
    double sq = 0.0;
    g.for_each([&](const double& v) { sq += v * v; });
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) g.scale(cfg_.grad_clip / norm);
  }

 public:
  // Sequential per-agent update over a fresh uniform permutation. Per agent
  // the maximized objective is the batch mean of
  //   min_q Q(s, a_pred_new, a_self_theta, a_succ_stored)
  //   - alpha log pi(a_self_theta | o)
  //   + pipeline(log pi(a_self_stored | o)) * ShapleyQ          (stop-gradient)
  // where pipeline = likelihood floor then Box-Cox (mode-dependent), with the
  // floor threshold, the Box-Cox fit and the Shapley coefficient all treated
  // as batch constants.
  void policy_update_sequential(const std::vector<std::int64_t>& batch, MetricsRow& row) {
    const AblationMode mode = cfg_.mode();
    const std::vector<int> perm = rng_.permutation(cfg_.n);
    const std::size_t b = batch.size();
    const double inv_b = 1.0 / static_cast<double>(b);
    const int d = cfg_.action_dim;

    std::vector<const Transition*> trans(b);
    for (std::size_t t = 0; t < b; ++t) trans[t] = &buffer_.get(batch[t]);

    double bc_metric_acc = 0.0;
    long bc_metric_count = 0;

    for (int pos = 0; pos < cfg_.n; ++pos) {
      const int agent = perm[static_cast<std::size_t>(pos)];
      GaussianPolicy& pol = policies_[static_cast<std::size_t>(agent)];
      row.shapley_q_mean[static_cast<std::size_t>(agent)] = 0.0;

      // stored own actions recovered to pre-squash space once per agent
      std::vector<std::vector<double>> u_stored(b);
      for (std::size_t t = 0; t < b; ++t) {
        std::span<const double> own(trans[t]->joint_action.data() +
                                        static_cast<std::size_t>(agent) * d,
                                    static_cast<std::size_t>(d));
        u_stored[t] = atanh_recover(own);
      }

      // Shapley coefficients from the historical joint action; constant
      // across mini-epochs because only the critics enter.
      const bool wants_historical_shapley =
          mode == AblationMode::Full || mode == AblationMode::Local || mode == AblationMode::NoBc;
      std::vector<double> qphi(b, 0.0);
      if (wants_historical_shapley) {
        for (std::size_t t = 0; t < b; ++t) {
          qphi[t] = shapley_q(critics_, trans[t]->state, trans[t]->joint_action, agent,
                              cfg_.sample_times, rng_);
          ++shapley_q_calls_;
        }
        double m = 0.0;
        for (double v : qphi) m += v;
        row.shapley_q_mean[static_cast<std::size_t>(agent)] = m * inv_b;
      }

      bool skipped = false;
      for (int epoch = 0; epoch < cfg_.mini_epochs && !skipped; ++epoch) {
        nn::ParamSet grads = pol.net.zeros_like();
        double objective = 0.0;

        std::vector<PolicyHead> heads(b);
        for (std::size_t t = 0; t < b; ++t)
          heads[t] = eval_head(pol, trans[t]->obs[static_cast<std::size_t>(agent)]);

        // historical likelihood pipeline at the current parameters
        std::vector<double> logf(b, 0.0), pipeline(b, 0.0), pipeline_grad(b, 0.0);
        if (wants_historical_shapley) {
          for (std::size_t t = 0; t < b; ++t)
            logf[t] = historical_log_prob_from_head(heads[t], u_stored[t]);
          double mx = logf[0];
          for (double v : logf) mx = std::max(mx, v);
          const double t_limit = mx - cfg_.log_adjustment;
          const std::vector<double> floored = apply_likelihood_floor(logf, cfg_.log_adjustment);
          if (mode == AblationMode::NoBc) {
            pipeline = floored;
            for (std::size_t t = 0; t < b; ++t)
              pipeline_grad[t] = likelihood_floor_derivative(logf[t], t_limit);
          } else {
            const BoxCoxFit fit = estimate_lambda(floored, grid_);
            for (std::size_t t = 0; t < b; ++t) {
              pipeline[t] = bc_transform_shifted(floored[t], fit) + fit.x_min;
              pipeline_grad[t] = bc_transform_shifted_derivative(floored[t], fit) *
                                 likelihood_floor_derivative(logf[t], t_limit);
            }
          }
        }

        std::vector<double> joint(static_cast<std::size_t>(cfg_.n) * d);
        std::vector<double> action_grad(joint.size());
        std::vector<double> noise(static_cast<std::size_t>(d));
        const double alpha = temp_.alpha();

        for (std::size_t t = 0; t < b; ++t) {
          for (auto& e : noise) e = rng_.normal();
          const PolicySample self = sample_with_noise(heads[t], noise);

          if (mode != AblationMode::Local) {
            // predecessors resampled from their already-updated policies,
            // successors kept at the stored historical actions
            joint.assign(trans[t]->joint_action.begin(), trans[t]->joint_action.end());
            for (int q = 0; q < pos; ++q) {
              const int pred = perm[static_cast<std::size_t>(q)];
              const PolicySample ps =
                  sample(policies_[static_cast<std::size_t>(pred)],
                         trans[t]->obs[static_cast<std::size_t>(pred)], rng_);
              std::copy(ps.action.begin(), ps.action.end(),
                        joint.begin() + static_cast<std::size_t>(pred) * d);
            }
            std::copy(self.action.begin(), self.action.end(),
                      joint.begin() + static_cast<std::size_t>(agent) * d);

            std::fill(action_grad.begin(), action_grad.end(), 0.0);
            const double qv = q_min_main_with_action_grad(critics_, trans[t]->state, joint,
                                                          action_grad);
            objective += qv * inv_b;
            std::span<const double> self_grad(action_grad.data() +
                                                  static_cast<std::size_t>(agent) * d,
                                              static_cast<std::size_t>(d));
            std::vector<double> scaled(self_grad.begin(), self_grad.end());
            for (auto& v : scaled) v *= inv_b;
            accumulate_sample_action_grad(pol, heads[t], self, scaled, grads);
          }

          objective += -alpha * self.log_prob * inv_b;
          accumulate_sample_logp_grad(pol, heads[t], self, -alpha * inv_b, grads);

          if (wants_historical_shapley) {
            objective += pipeline[t] * qphi[t] * inv_b;
            accumulate_historical_logp_grad(pol, heads[t], u_stored[t],
                                            pipeline_grad[t] * qphi[t] * inv_b, grads);
          } else if (mode == AblationMode::CurrentAction) {
            // Shapley coefficient from the freshly sampled own action; the
            // gradient flows through log pi only.
            joint.assign(trans[t]->joint_action.begin(), trans[t]->joint_action.end());
            std::copy(self.action.begin(), self.action.end(),
                      joint.begin() + static_cast<std::size_t>(agent) * d);
            const double qphi_t = shapley_q(critics_, trans[t]->state, joint, agent,
                                            cfg_.sample_times, rng_);
            ++shapley_q_calls_;
            row.shapley_q_mean[static_cast<std::size_t>(agent)] += qphi_t * inv_b / cfg_.mini_epochs;
            objective += self.log_prob * qphi_t * inv_b;
            accumulate_sample_logp_grad(pol, heads[t], self, qphi_t * inv_b, grads);
          }
        }

        if (!std::isfinite(objective) || !grads.all_finite()) {
          ++skipped_agent_updates_;
          skipped = true;
          break;
        }
        clip_grads(grads);
        grads.scale(-1.0);  // ascend
        nn::adam_step(pol.net, grads, policy_optims_[static_cast<std::size_t>(agent)]);

        if (epoch == cfg_.mini_epochs - 1 && wants_historical_shapley) {
          for (double v : pipeline) bc_metric_acc += v;
          bc_metric_count += static_cast<long>(b);
        }
      }
    }
    row.bc_loglik_mean = bc_metric_count > 0 ? bc_metric_acc / bc_metric_count : 0.0;
  }

 private:
  void temperature_update(const std::vector<std::int64_t>& batch) {
    std::vector<double> joint_logp(batch.size(), 0.0);
    for (std::size_t t = 0; t < batch.size(); ++t) {
      const Transition& tr = buffer_.get(batch[t]);
      for (int i = 0; i < cfg_.n; ++i)
        joint_logp[t] += sample(policies_[static_cast<std::size_t>(i)],
                                tr.obs[static_cast<std::size_t>(i)], rng_).log_prob;
    }
    temp_ = temperature_step(temp_, joint_logp, cfg_.lr_alpha);
  }

  RunConfig cfg_;
  Rng rng_;
  std::unique_ptr<Env> env_;
  ReplayBuffer buffer_;

  std::vector<GaussianPolicy> policies_;
  std::vector<nn::OptimState> policy_optims_;
  TwinCritics critics_;
  nn::OptimState critic_optim1_, critic_optim2_;
  Temperature temp_;
  BoxCoxGrid grid_;

  long env_steps_ = 0;
  long episodes_done_ = 0;
  std::int64_t episode_id_ = 0;
  int episode_step_ = 0;
  double episode_return_ = 0.0;
  std::vector<std::vector<double>> cached_obs_;
  std::vector<double> window_returns_;
  double last_ret_mean_ = 0.0;
  double last_ret_std_ = 0.0;
  long skipped_agent_updates_ = 0;
  long shapley_q_calls_ = 0;
};

// First metrics row at which the trailing mean of ret_mean (window 3) crosses
// the threshold; nullopt if it never does.
inline std::optional<long> steps_to_threshold(const std::vector<MetricsRow>& rows,
                                              double threshold) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t lo = (k >= 2) ? k - 2 : 0;
    double m = 0.0;
    for (std::size_t j = lo; j <= k; ++j) m += rows[j].ret_mean;
    m /= static_cast<double>(k - lo + 1);
    if (m >= threshold) return rows[k].step;
  }
  return std::nullopt;
}

struct RunResult {
  RunSummary summary;
  std::vector<MetricsRow> rows;
};

// Drives a trainer to completion, optionally stopping once the trailing
// return mean crosses `stop_threshold`, and writes metrics/summary/checkpoint
// artifacts when an output directory is given (empty string disables I/O).
inline RunResult run_training(const RunConfig& cfg, const std::string& out_dir,
                              std::optional<double> stop_threshold = std::nullopt) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();

  const bool write = !out_dir.empty();
  std::ofstream metrics;
  if (write) {
    fs::create_directories(out_dir);
    metrics.open(fs::path(out_dir) / "metrics.csv", std::ios::binary);
    if (!metrics) throw std::runtime_error("cannot open metrics.csv for writing in " + out_dir);
    metrics << metrics_csv_header(cfg.n) << "\n";
  }

  Trainer trainer(cfg);
  RunResult result;
  long iteration = 0;
  while (!trainer.finished()) {
    MetricsRow row = trainer.train_iteration();
    ++iteration;
    if (write) metrics << metrics_csv_row(row) << "\n";
    result.rows.push_back(std::move(row));
    if (write && cfg.checkpoint_interval > 0 && iteration % cfg.checkpoint_interval == 0) {
      std::ofstream ck(fs::path(out_dir) / ("checkpoint_" + std::to_string(iteration) + ".json"),
                       std::ios::binary);
      ck << trainer.checkpoint_json().dump(2) << "\n";
    }
    if (stop_threshold && steps_to_threshold(result.rows, *stop_threshold)) break;
  }
  if (write) metrics.close();

  RunSummary& s = result.summary;
  s.total_steps = trainer.env_steps();
  s.episodes = trainer.episodes_done();
  s.final_alpha = trainer.temperature().alpha();
  s.skipped_agent_updates = trainer.skipped_agent_updates();
  if (!result.rows.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, result.rows.size() / 10);
    std::vector<double> tail_returns;
    for (std::size_t k = result.rows.size() - tail; k < result.rows.size(); ++k)
      tail_returns.push_back(result.rows[k].ret_mean);
    s.final_ret_mean = stats::mean(tail_returns);
    s.final_ret_std = tail_returns.size() > 1 ? stats::stddev(tail_returns) : 0.0;
  }
  s.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (write) {
    nlohmann::json summary{{"config", cfg.to_json()},
                           {"env_constants", trainer.env().constants()},
                           {"seed", cfg.seed},
                           {"total_steps", s.total_steps},
                           {"episodes", s.episodes},
                           {"final_ret_mean", s.final_ret_mean},
                           {"final_ret_std", s.final_ret_std},
                           {"final_alpha", s.final_alpha},
                           {"skipped_agent_updates", s.skipped_agent_updates},
                           {"wall_seconds", s.wall_seconds}};
    std::ofstream sj(fs::path(out_dir) / "summary.json", std::ios::binary);
    sj << summary.dump(2) << "\n";
    std::ofstream ck(fs::path(out_dir) / "checkpoint.json", std::ios::binary);
    ck << trainer.checkpoint_json().dump(2) << "\n";
  }
  return result;
}

}  // namespace his
