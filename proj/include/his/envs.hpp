#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "his/rng.hpp"

namespace his {

// Cooperative environment with one global team reward and per-agent
// continuous actions in [-1, 1]^D. Episodes run exactly `horizon` steps
// unless a true terminal state occurs; time-limit truncation is not a
// terminal (bootstrapping stays valid at the cut).
class Env {
 public:
  virtual ~Env() = default;

  virtual int num_agents() const = 0;
  virtual int obs_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int state_dim() const = 0;
  virtual int horizon() const = 0;

  virtual void reset(Rng& rng) = 0;
  virtual const std::vector<double>& state() const = 0;
  virtual std::vector<double> observation(int agent) const = 0;
  // Advances one step; returns the global reward and sets *terminal.
  virtual double step(std::span<const double> joint_action, bool* terminal) = 0;

  // Closed-form optimal per-episode return when the task admits one.
  virtual bool has_known_optimum() const { return false; }
  virtual double optimal_episode_return() const {
    throw std::logic_error("env has no closed-form optimum");
  }

  // Environment constants, echoed into the run summary.
  virtual nlohmann::json constants() const = 0;
};

namespace detail {

// Solve (A)x = b for a small symmetric positive-definite system by Gaussian
// elimination with partial pivoting.
inline std::vector<double> solve_dense(std::vector<std::vector<double>> a,
                                       std::vector<double> b) {
  const std::size_t k = b.size();
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (std::fabs(a[piv][col]) < 1e-12) throw std::invalid_argument("singular system");
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < k; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c2 = col; c2 < k; ++c2) a[r][c2] -= f * a[col][c2];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(k, 0.0);
  for (std::size_t row = k; row-- > 0;) {
    double s = b[row];
    for (std::size_t c2 = row + 1; c2 < k; ++c2) s -= a[row][c2] * x[c2];
    x[row] = s / a[row][row];
  }
  return x;
}

inline int matrix_rank(std::vector<std::vector<double>> a) {
  if (a.empty()) return 0;
  const std::size_t rows = a.size(), cols = a[0].size();
  int rank = 0;
  std::size_t row = 0;
  for (std::size_t col = 0; col < cols && row < rows; ++col) {
    std::size_t piv = row;
    for (std::size_t r = row + 1; r < rows; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (std::fabs(a[piv][col]) < 1e-10) continue;
    std::swap(a[piv], a[row]);
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == row) continue;
      const double f = a[r][col] / a[row][col];
      for (std::size_t c2 = 0; c2 < cols; ++c2) a[r][c2] -= f * a[row][c2];
    }
    ++row;
    ++rank;
  }
  return rank;
}

}  // namespace detail

// Quadratic team task: fixed context, reward r(a) = offset - |W a - g|^2
// where W stacks one K x D block per agent. The optimum has a closed form
// (least squares), and nonzero cross-blocks of W^T W couple the agents'
// optimal actions. State and every observation equal the context vector g.
class QuadCoupledEnv : public Env {
 public:
  // w: K x (n*D) row-major, g: K
  QuadCoupledEnv(int n, int action_dim, int out_dim, std::vector<double> w,
                 std::vector<double> g, double offset, int horizon)
      : n_(n), d_(action_dim), k_(out_dim), w_(std::move(w)), g_(std::move(g)),
        offset_(offset), horizon_(horizon) {
    if (n_ < 1 || d_ < 1 || k_ < 1 || horizon_ < 1)
      throw std::invalid_argument("quad_coupled: bad dimensions");
    if (w_.size() != static_cast<std::size_t>(k_) * n_ * d_ ||
        g_.size() != static_cast<std::size_t>(k_))
      throw std::invalid_argument("quad_coupled: W/g size mismatch");
    for (int a = 0; a < n_; ++a) {
      std::vector<std::vector<double>> block(static_cast<std::size_t>(k_),
                                             std::vector<double>(static_cast<std::size_t>(d_)));
      for (int r = 0; r < k_; ++r)
        for (int c = 0; c < d_; ++c)
          block[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
              w_[static_cast<std::size_t>(r) * n_ * d_ + a * d_ + c];
      if (detail::matrix_rank(block) < std::min(k_, d_))
        throw std::invalid_argument("quad_coupled: agent block not full rank");
    }
    optimal_action_ = least_squares_optimum();
    double resid = 0.0;
    const auto wa = apply_w(optimal_action_);
    for (int r = 0; r < k_; ++r) resid += (wa[r] - g_[r]) * (wa[r] - g_[r]);
    optimal_step_reward_ = offset_ - resid;
  }

  int num_agents() const override { return n_; }
  int obs_dim() const override { return k_; }
  int action_dim() const override { return d_; }
  int state_dim() const override { return k_; }
  int horizon() const override { return horizon_; }

  void reset(Rng&) override {}
  const std::vector<double>& state() const override { return g_; }
  std::vector<double> observation(int) const override { return g_; }

  double step(std::span<const double> joint_action, bool* terminal) override {
    if (joint_action.size() != static_cast<std::size_t>(n_) * d_)
      throw std::invalid_argument("quad_coupled: joint action size mismatch");
    const auto wa = apply_w(joint_action);
    double resid = 0.0;
    for (int r = 0; r < k_; ++r) resid += (wa[r] - g_[r]) * (wa[r] - g_[r]);
    *terminal = false;  // fixed-length episodes, truncation is not terminal
    return offset_ - resid;
  }

  bool has_known_optimum() const override { return true; }
  double optimal_episode_return() const override {
    return optimal_step_reward_ * static_cast<double>(horizon_);
  }
  double optimal_step_reward() const { return optimal_step_reward_; }
  const std::vector<double>& optimal_action() const { return optimal_action_; }

  nlohmann::json constants() const override {
    return {{"env", "quad_coupled"}, {"n", n_}, {"action_dim", d_}, {"out_dim", k_},
            {"offset", offset_}, {"horizon", horizon_},
            {"optimal_step_reward", optimal_step_reward_}, {"W", w_}, {"g", g_}};
  }

 private:
  std::vector<double> apply_w(std::span<const double> a) const {
    std::vector<double> out(static_cast<std::size_t>(k_), 0.0);
    for (int r = 0; r < k_; ++r) {
      const double* row = w_.data() + static_cast<std::size_t>(r) * n_ * d_;
      double s = 0.0;
      for (int c = 0; c < n_ * d_; ++c) s += row[c] * a[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(r)] = s;
    }
    return out;
  }

  // Min-norm least squares a* = W^T (W W^T)^{-1} g, valid because row rank is
  // checked at construction via the per-block condition and K <= n*D in use.
  std::vector<double> least_squares_optimum() const {
    std::vector<std::vector<double>> wwt(static_cast<std::size_t>(k_),
                                         std::vector<double>(static_cast<std::size_t>(k_), 0.0));
    for (int r = 0; r < k_; ++r)
      for (int c = 0; c < k_; ++c) {
        double s = 0.0;
        for (int j = 0; j < n_ * d_; ++j)
          s += w_[static_cast<std::size_t>(r) * n_ * d_ + j] *
               w_[static_cast<std::size_t>(c) * n_ * d_ + j];
        wwt[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = s;
      }
    const std::vector<double> y = detail::solve_dense(wwt, g_);
    std::vector<double> a(static_cast<std::size_t>(n_) * d_, 0.0);
    for (int j = 0; j < n_ * d_; ++j) {
      double s = 0.0;
      for (int r = 0; r < k_; ++r) s += w_[static_cast<std::size_t>(r) * n_ * d_ + j] * y[static_cast<std::size_t>(r)];
      a[static_cast<std::size_t>(j)] = s;
    }
    return a;
  }

  int n_, d_, k_;
  std::vector<double> w_, g_;
  double offset_;
  int horizon_;
  std::vector<double> optimal_action_;
  double optimal_step_reward_ = 0.0;
};

// Seeded construction: W entries ~ U(-s, s), g scaled so the min-norm optimum
// stays strictly inside the action box.
inline std::unique_ptr<QuadCoupledEnv> make_quad_coupled(int n, int action_dim, int out_dim,
                                                         double offset, int horizon,
                                                         Rng& structure_rng,
                                                         double w_scale = 0.7) {
  std::vector<double> w(static_cast<std::size_t>(out_dim) * n * action_dim);
  for (auto& v : w) v = structure_rng.uniform(-w_scale, w_scale);
  std::vector<double> g(static_cast<std::size_t>(out_dim));
  for (auto& v : g) v = structure_rng.uniform(-1.0, 1.0);

  for (int attempt = 0; attempt < 64; ++attempt) {
    try {
      auto env = std::make_unique<QuadCoupledEnv>(n, action_dim, out_dim, w, g, offset, horizon);
      double amax = 0.0;
      for (double a : env->optimal_action()) amax = std::max(amax, std::fabs(a));
      if (amax < 0.8) return env;
      for (auto& v : g) v *= 0.75;  // pull the target until the optimum is interior
    } catch (const std::invalid_argument&) {
      for (auto& v : w) v = structure_rng.uniform(-w_scale, w_scale);
    }
  }
  throw std::runtime_error("make_quad_coupled: could not build a usable task");
}

// Two-dimensional point agents covering landmarks. Global reward each step is
//   -sum_landmarks min_agent dist(agent, landmark) - collision_penalty * (#overlapping pairs)
// Velocity-style actions: pos += dt * a, clipped to the arena.
class SpreadMiniEnv : public Env {
 public:
  static constexpr double kArena = 1.0;        // positions live in [-1, 1]^2
  static constexpr double kDt = 0.1;
  static constexpr double kAgentRadius = 0.1;
  static constexpr double kCollisionPenalty = 1.0;

  SpreadMiniEnv(int n, int num_landmarks, int horizon)
      : n_(n), l_(num_landmarks), horizon_(horizon) {
    if (n_ < 1 || n_ > 4) throw std::invalid_argument("spread_mini: n must be in [1, 4]");
    if (l_ < 1 || horizon_ < 1) throw std::invalid_argument("spread_mini: bad dimensions");
    pos_.assign(static_cast<std::size_t>(2 * n_), 0.0);
    vel_.assign(static_cast<std::size_t>(2 * n_), 0.0);
    landmarks_.assign(static_cast<std::size_t>(2 * l_), 0.0);
    rebuild_state();
  }

  int num_agents() const override { return n_; }
  int obs_dim() const override { return 4 + 2 * l_ + 2 * (n_ - 1); }
  int action_dim() const override { return 2; }
  int state_dim() const override { return 2 * n_ + 2 * l_; }
  int horizon() const override { return horizon_; }

  void reset(Rng& rng) override {
    for (auto& p : pos_) p = rng.uniform(-0.8, 0.8);
    for (auto& v : vel_) v = 0.0;
    for (auto& p : landmarks_) p = rng.uniform(-0.8, 0.8);
    rebuild_state();
  }

  const std::vector<double>& state() const override { return state_; }

  std::vector<double> observation(int agent) const override {
    std::vector<double> o;
    o.reserve(static_cast<std::size_t>(obs_dim()));
    o.push_back(pos_[2 * agent]);
    o.push_back(pos_[2 * agent + 1]);
    o.push_back(vel_[2 * agent]);
    o.push_back(vel_[2 * agent + 1]);
    for (int l = 0; l < l_; ++l) {
      o.push_back(landmarks_[2 * l] - pos_[2 * agent]);
      o.push_back(landmarks_[2 * l + 1] - pos_[2 * agent + 1]);
    }
    for (int a = 0; a < n_; ++a) {
      if (a == agent) continue;
      o.push_back(pos_[2 * a] - pos_[2 * agent]);
      o.push_back(pos_[2 * a + 1] - pos_[2 * agent + 1]);
    }
    return o;
  }

  double step(std::span<const double> joint_action, bool* terminal) override {
    if (joint_action.size() != static_cast<std::size_t>(2 * n_))
      throw std::invalid_argument("spread_mini: joint action size mismatch");
    for (int a = 0; a < n_; ++a) {
      for (int j = 0; j < 2; ++j) {
        const double v = std::min(1.0, std::max(-1.0, joint_action[static_cast<std::size_t>(2 * a + j)]));
        vel_[static_cast<std::size_t>(2 * a + j)] = v;
        double p = pos_[static_cast<std::size_t>(2 * a + j)] + kDt * v;
        p = std::min(kArena, std::max(-kArena, p));
        pos_[static_cast<std::size_t>(2 * a + j)] = p;
      }
    }
    rebuild_state();
    *terminal = false;
    return reward();
  }

  double reward() const {
    double r = 0.0;
    for (int l = 0; l < l_; ++l) {
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < n_; ++a)
        best = std::min(best, distance(pos_[2 * a], pos_[2 * a + 1], landmarks_[2 * l],
                                       landmarks_[2 * l + 1]));
      r -= best;
    }
    for (int a = 0; a < n_; ++a)
      for (int b = a + 1; b < n_; ++b)
        if (distance(pos_[2 * a], pos_[2 * a + 1], pos_[2 * b], pos_[2 * b + 1]) <
            2.0 * kAgentRadius)
          r -= kCollisionPenalty;
    return r;
  }

  void set_positions(std::span<const double> agent_pos, std::span<const double> landmark_pos) {
    if (agent_pos.size() != pos_.size() || landmark_pos.size() != landmarks_.size())
      throw std::invalid_argument("spread_mini: position size mismatch");
    std::copy(agent_pos.begin(), agent_pos.end(), pos_.begin());
    std::copy(landmark_pos.begin(), landmark_pos.end(), landmarks_.begin());
    rebuild_state();
  }

  nlohmann::json constants() const override {
    return {{"env", "spread_mini"}, {"n", n_}, {"landmarks", l_}, {"horizon", horizon_},
            {"dt", kDt}, {"agent_radius", kAgentRadius},
            {"collision_penalty", kCollisionPenalty}, {"arena", kArena}};
  }

 private:
  static double distance(double x0, double y0, double x1, double y1) {
    return std::hypot(x1 - x0, y1 - y0);
  }

  void rebuild_state() {
    state_.clear();
    state_.insert(state_.end(), pos_.begin(), pos_.end());
    state_.insert(state_.end(), landmarks_.begin(), landmarks_.end());
  }

  int n_, l_, horizon_;
  std::vector<double> pos_, vel_, landmarks_, state_;
};

// Diagnostic wrapper: one agent's action is replaced with zeros before the
// base dynamics, making it a true dummy player by construction.
class DummyAgentEnv : public Env {
 public:
  DummyAgentEnv(std::unique_ptr<Env> base, int dummy_index)
      : base_(std::move(base)), dummy_(dummy_index) {
    if (!base_) throw std::invalid_argument("dummy_agent_env: null base");
    if (dummy_ < 0 || dummy_ >= base_->num_agents())
      throw std::invalid_argument("dummy_agent_env: dummy index out of range");
  }

  int num_agents() const override { return base_->num_agents(); }
  int obs_dim() const override { return base_->obs_dim(); }
  int action_dim() const override { return base_->action_dim(); }
  int state_dim() const override { return base_->state_dim(); }
  int horizon() const override { return base_->horizon(); }
  void reset(Rng& rng) override { base_->reset(rng); }
  const std::vector<double>& state() const override { return base_->state(); }
  std::vector<double> observation(int agent) const override { return base_->observation(agent); }

  double step(std::span<const double> joint_action, bool* terminal) override {
    std::vector<double> a(joint_action.begin(), joint_action.end());
    const int d = base_->action_dim();
    for (int j = 0; j < d; ++j) a[static_cast<std::size_t>(dummy_ * d + j)] = 0.0;
    return base_->step(a, terminal);
  }

  // The base optimum assumes all agents act, which no longer holds with one
  // block forced to zero, so no closed form is exposed here.
  bool has_known_optimum() const override { return false; }

  int dummy_index() const { return dummy_; }

  nlohmann::json constants() const override {
    nlohmann::json j = base_->constants();
    j["dummy_agent"] = dummy_;
    return j;
  }

 private:
  std::unique_ptr<Env> base_;
  int dummy_;
};

}  // namespace his
