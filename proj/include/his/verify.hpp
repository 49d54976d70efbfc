#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "his/boxcox.hpp"
#include "his/coopgame.hpp"
#include "his/nn.hpp"
#include "his/policy.hpp"
#include "his/rng.hpp"
#include "his/stats.hpp"
#include "his/valuation.hpp"

// Batch verification: the quantified claims of the allocation mechanism and
// the gradient correctness of every trained objective, runnable on demand.

namespace his::verify {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
  nlohmann::json fixture;  // failing input serialized for replay, null otherwise
};

struct Report {
  std::string suite;
  std::vector<Check> checks;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json cj = nlohmann::json::array();
    for (const auto& c : checks)
      cj.push_back({{"name", c.name},
                    {"pass", c.pass},
                    {"detail", c.detail},
                    {"fixture", c.fixture}});
    return {{"suite", suite}, {"pass", pass()}, {"checks", cj}};
  }
};

// Breaks supermodularity deterministically: raising a singleton above the
// grand value violates the pair (that singleton, its complement) while the
// allocation-sum identity is untouched.
inline CharacteristicGame break_convexity(const CharacteristicGame& game) {
  std::vector<double> values(game.num_coalitions());
  for (std::uint32_t m = 0; m < game.num_coalitions(); ++m) values[m] = game.value(Coalition{m});
  values[1] = game.grand_value() + 1.0;
  return CharacteristicGame(game.n(), std::move(values));
}

inline Report theorems(std::uint64_t seed, int count) {
  Report report;
  report.suite = "theorems";
  Rng rng(seed);

  Check shapley_core{"shapley_allocation_in_core", true, "", nullptr};
  Check hybrid_eff{"hybrid_allocation_efficient", true, "", nullptr};
  Check hybrid_eff_nonconvex{"hybrid_allocation_efficient_nonconvex", true, "", nullptr};
  Check hybrid_core{"hybrid_allocation_in_core", true, "", nullptr};
  Check generator_convex{"generator_output_convex_superadditive", true, "", nullptr};

  for (int k = 0; k < count; ++k) {
    const int n = 2 + k % 5;  // cycles 2..6
    const CharacteristicGame game = generate_convex_game(rng, n);

    if (generator_convex.pass && (!is_convex(game) || !is_superadditive(game))) {
      generator_convex.pass = false;
      generator_convex.detail = "generated game fails convexity/superadditivity";
      generator_convex.fixture = game.to_json();
    }
    if (shapley_core.pass && !is_in_core(game, shapley_allocation(game))) {
      shapley_core.pass = false;
      shapley_core.detail = "pure Shapley allocation left the Core";
      shapley_core.fixture = game.to_json();
    }
    const Allocation hybrid = hybrid_allocation(game);
    if (hybrid_eff.pass && !is_efficient(game, hybrid)) {
      hybrid_eff.pass = false;
      hybrid_eff.detail = "hybrid allocation sum != v(N)";
      hybrid_eff.fixture = game.to_json();
    }
    if (hybrid_core.pass && !is_in_core(game, hybrid)) {
      hybrid_core.pass = false;
      hybrid_core.detail = "hybrid allocation left the Core";
      hybrid_core.fixture = game.to_json();
    }
    const CharacteristicGame broken = break_convexity(game);
    if (hybrid_eff_nonconvex.pass && !is_efficient(broken, hybrid_allocation(broken))) {
      hybrid_eff_nonconvex.pass = false;
      hybrid_eff_nonconvex.detail = "hybrid allocation sum != v(N) on a non-convex game";
      hybrid_eff_nonconvex.fixture = broken.to_json();
    }
  }
  report.checks = {shapley_core, hybrid_eff, hybrid_eff_nonconvex, hybrid_core, generator_convex};
  return report;
}

// Coalition-sampler frequencies vs the predecessor-set law
// Pr(C) = |C|!(n-|C|-1)!/n!, chi-square over all 2^(n-1) subsets.
inline Report distributions(std::uint64_t seed, long draws) {
  Report report;
  report.suite = "distributions";
  Rng rng(seed);
  for (int n = 2; n <= 5; ++n) {
    const int agent = 0;
    const std::size_t cells = std::size_t{1} << (n - 1);
    std::vector<std::int64_t> counts(cells, 0);
    for (long k = 0; k < draws; ++k) {
      const Coalition c = sample_coalition(rng, n, agent);
      // agent 0 excluded, so the remaining bits index the cell directly
      counts[c.bits >> 1] += 1;
    }
    std::vector<double> expected(cells, 0.0);
    for (std::size_t cell = 0; cell < cells; ++cell) {
      const Coalition c{static_cast<std::uint32_t>(cell << 1)};
      expected[cell] = coalition_weight(c.size(), n);
    }
    const auto res = stats::chi_square_test(counts, expected, draws);
    Check check;
    check.name = "coalition_sampler_chi_square_n" + std::to_string(n);
    check.pass = res.p_value > 1e-3;
    check.detail = "chi2=" + std::to_string(res.statistic) + " p=" + std::to_string(res.p_value);
    if (!check.pass) check.fixture = {{"n", n}, {"counts", counts}, {"draws", draws}};
    report.checks.push_back(std::move(check));
  }
  return report;
}

// ---- finite-difference machinery -------------------------------------------

inline std::vector<double*> param_ptrs(nn::ParamSet& p) {
  std::vector<double*> ptrs;
  p.for_each([&](double& v) { ptrs.push_back(&v); });
  return ptrs;
}

inline std::vector<double> flatten_grads(const nn::ParamSet& g) {
  std::vector<double> out;
  g.for_each([&](const double& v) { out.push_back(v); });
  return out;
}

// Central finite differences of a scalar objective with respect to every
// parameter of `p`; the objective must be a pure function of the current
// parameter values.
inline std::vector<double> finite_difference_grad(nn::ParamSet& p,
                                                  const std::function<double()>& objective,
                                                  double h = 1e-5) {
  std::vector<double> grad;
  for (double* v : param_ptrs(p)) {
    const double saved = *v;
    *v = saved + h;
    const double up = objective();
    *v = saved - h;
    const double down = objective();
    *v = saved;
    grad.push_back((up - down) / (2.0 * h));
  }
  return grad;
}

// max over components of |analytic - fd| / max(|fd|, |analytic|, floor)
inline double max_relative_error(std::span<const double> analytic, std::span<const double> fd,
                                 double abs_floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double denom = std::max({std::fabs(fd[k]), std::fabs(analytic[k]), abs_floor});
    worst = std::max(worst, std::fabs(analytic[k] - fd[k]) / denom);
  }
  return worst;
}

namespace detail {

struct GradCase {
  std::string name;
  double max_err = 0.0;
};

// The per-agent policy objective with every batch statistic frozen, matching
// the gradient semantics of the sequential update: the q-min critic choice,
// the likelihood floor threshold, the Box-Cox fit and the Shapley
// coefficients are all constants of the differentiation.
struct PolicyTermFixture {
  GaussianPolicy policy;
  TwinCritics critics;
  std::vector<std::vector<double>> states, obs;
  std::vector<std::vector<double>> stored_joint;  // successors + own stored action
  std::vector<std::vector<double>> noise;         // per-sample reparameterization draws
  std::vector<std::vector<double>> u_stored;      // atanh-recovered own blocks
  std::vector<double> qphi;                       // frozen Shapley coefficients
  double alpha = 0.2;
  double t_limit = 0.0;
  BoxCoxFit fit;
  int agent = 0;

  double sac_term() const {
    const int d = policy.action_dim;
    double obj = 0.0;
    for (std::size_t t = 0; t < states.size(); ++t) {
      const PolicyHead h = eval_head(policy, obs[t]);
      const PolicySample s = sample_with_noise(h, noise[t]);
      std::vector<double> joint = stored_joint[t];
      std::copy(s.action.begin(), s.action.end(),
                joint.begin() + static_cast<std::size_t>(agent) * d);
      obj += q_min_main(critics, states[t], joint) - alpha * s.log_prob;
    }
    return obj / static_cast<double>(states.size());
  }

  double shapley_term() const {
    double obj = 0.0;
    for (std::size_t t = 0; t < states.size(); ++t) {
      const PolicyHead h = eval_head(policy, obs[t]);
      const double logf = historical_log_prob_from_head(h, u_stored[t]);
      const double floored =
          logf < t_limit ? t_limit + std::exp(logf - t_limit) - 1.0 : logf;
      const double bc = bc_transform_shifted(floored, fit) + fit.x_min;
      obj += bc * qphi[t];
    }
    return obj / static_cast<double>(states.size());
  }

  nn::ParamSet sac_term_grad() {
    const int d = policy.action_dim;
    nn::ParamSet grads = policy.net.zeros_like();
    const double inv_b = 1.0 / static_cast<double>(states.size());
    std::vector<double> action_grad(stored_joint[0].size());
    for (std::size_t t = 0; t < states.size(); ++t) {
      const PolicyHead h = eval_head(policy, obs[t]);
      const PolicySample s = sample_with_noise(h, noise[t]);
      std::vector<double> joint = stored_joint[t];
      std::copy(s.action.begin(), s.action.end(),
                joint.begin() + static_cast<std::size_t>(agent) * d);
      std::fill(action_grad.begin(), action_grad.end(), 0.0);
      q_min_main_with_action_grad(critics, states[t], joint, action_grad);
      std::vector<double> self_grad(action_grad.begin() + static_cast<std::size_t>(agent) * d,
                                    action_grad.begin() + static_cast<std::size_t>(agent + 1) * d);
      for (auto& v : self_grad) v *= inv_b;
      accumulate_sample_action_grad(policy, h, s, self_grad, grads);
      accumulate_sample_logp_grad(policy, h, s, -alpha * inv_b, grads);
    }
    return grads;
  }

  nn::ParamSet shapley_term_grad() {
    nn::ParamSet grads = policy.net.zeros_like();
    const double inv_b = 1.0 / static_cast<double>(states.size());
    for (std::size_t t = 0; t < states.size(); ++t) {
      const PolicyHead h = eval_head(policy, obs[t]);
      const double logf = historical_log_prob_from_head(h, u_stored[t]);
      const double coeff = bc_transform_shifted_derivative(
                               logf < t_limit ? t_limit + std::exp(logf - t_limit) - 1.0 : logf,
                               fit) *
                           likelihood_floor_derivative(logf, t_limit) * qphi[t] * inv_b;
      accumulate_historical_logp_grad(policy, h, u_stored[t], coeff, grads);
    }
    return grads;
  }
};

inline PolicyTermFixture make_policy_fixture(Rng& rng, int n, int d, int batch) {
  PolicyTermFixture f;
  const int obs_dim = 3;
  const int state_dim = 3;
  const std::vector<int> hidden = {6, 6};
  f.policy = make_policy(obs_dim, d, hidden, rng);
  f.critics = make_critics(state_dim, n, d, hidden, rng);
  // keep the two critics separated so the min never flips inside the FD step
  for (auto& bias : f.critics.q2.layers.back().b) bias += 1.5;
  f.agent = 0;
  f.alpha = 0.2;
  for (int t = 0; t < batch; ++t) {
    std::vector<double> s(state_dim), o(obs_dim), ja(static_cast<std::size_t>(n) * d),
        eps(static_cast<std::size_t>(d));
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    for (auto& v : o) v = rng.uniform(-1.0, 1.0);
    for (auto& v : ja) v = rng.uniform(-0.9, 0.9);
    for (auto& v : eps) v = rng.normal();
    f.states.push_back(s);
    f.obs.push_back(o);
    f.stored_joint.push_back(ja);
    f.noise.push_back(eps);
    std::span<const double> own(ja.data(), static_cast<std::size_t>(d));
    f.u_stored.push_back(atanh_recover(own));
    f.qphi.push_back(rng.uniform(-1.0, 1.0));
  }
  // freeze the floor threshold and the Box-Cox fit from the initial batch
  std::vector<double> logf;
  for (std::size_t t = 0; t < f.states.size(); ++t)
    logf.push_back(historical_log_prob(f.policy, f.obs[t], std::span<const double>(
        f.stored_joint[t].data(), static_cast<std::size_t>(d))));
  double mx = logf[0];
  for (double v : logf) mx = std::max(mx, v);
  f.t_limit = mx - 2.0;
  const auto floored = apply_likelihood_floor(logf, 2.0);
  f.fit = estimate_lambda(floored);
  return f;
}

}  // namespace detail

inline Report gradients(std::uint64_t seed) {
  Report report;
  report.suite = "gradients";
  Rng rng(seed);
  constexpr double kTol = 1e-4;

  auto add = [&](const std::string& name, double err) {
    Check c;
    c.name = name;
    c.pass = err <= kTol;
    c.detail = "max_rel_err=" + std::to_string(err);
    report.checks.push_back(std::move(c));
  };

  // plain network gradients against a random linear functional of the output
  {
    const std::vector<int> dims = {4, 8, 7, 3};
    nn::ParamSet net = nn::make_mlp(dims, nn::Activation::Tanh, rng);
    std::vector<double> x(4), c(3);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    nn::Tape tape;
    nn::forward(net, x, &tape);
    nn::ParamSet analytic = net.zeros_like();
    nn::backward(net, tape, c, analytic);
    const auto fd = finite_difference_grad(net, [&] {
      const auto y = nn::forward(net, x);
      double s = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) s += c[k] * y[k];
      return s;
    });
    add("mlp_backward", max_relative_error(flatten_grads(analytic), fd));
  }

  // critic regression loss
  {
    const std::vector<int> hidden = {6, 6};
    TwinCritics critics = make_critics(3, 2, 1, hidden, rng);
    std::vector<std::vector<double>> states, actions;
    std::vector<double> targets;
    for (int t = 0; t < 5; ++t) {
      std::vector<double> s(3), a(2);
      for (auto& v : s) v = rng.uniform(-1.0, 1.0);
      for (auto& v : a) v = rng.uniform(-0.9, 0.9);
      states.push_back(s);
      actions.push_back(a);
      targets.push_back(rng.uniform(-1.0, 1.0));
    }
    const CriticUpdate u = critic_loss_and_grads(critics, states, actions, targets);
    const auto fd = finite_difference_grad(critics.q1, [&] {
      double loss = 0.0;
      for (std::size_t t = 0; t < states.size(); ++t) {
        const double pred = q_eval(critics.q1, states[t], actions[t]);
        loss += 0.5 * (targets[t] - pred) * (targets[t] - pred);
      }
      return loss / static_cast<double>(states.size());
    });
    add("critic_loss", max_relative_error(flatten_grads(u.g1), fd));
  }

  // SAC policy term and the Shapley historical term, frozen-constant semantics
  {
    detail::PolicyTermFixture f = detail::make_policy_fixture(rng, 2, 2, 4);
    const nn::ParamSet g_sac = f.sac_term_grad();
    const auto fd_sac = finite_difference_grad(f.policy.net, [&] { return f.sac_term(); });
    add("sac_policy_term", max_relative_error(flatten_grads(g_sac), fd_sac));

    // finer step: the Box-Cox derivative y^(lambda-1) is steep near the batch
    // minimum where y approaches the shift constant
    const nn::ParamSet g_sh = f.shapley_term_grad();
    const auto fd_sh =
        finite_difference_grad(f.policy.net, [&] { return f.shapley_term(); }, 1e-6);
    add("shapley_policy_term", max_relative_error(flatten_grads(g_sh), fd_sh));
  }

  // historical log-likelihood on its own
  {
    const std::vector<int> hidden = {5};
    GaussianPolicy pol = make_policy(3, 2, hidden, rng);
    std::vector<double> o(3), a(2);
    for (auto& v : o) v = rng.uniform(-1.0, 1.0);
    for (auto& v : a) v = rng.uniform(-0.9, 0.9);
    const auto u = atanh_recover(a);
    const PolicyHead h = eval_head(pol, o);
    nn::ParamSet analytic = pol.net.zeros_like();
    accumulate_historical_logp_grad(pol, h, u, 1.0, analytic);
    const auto fd =
        finite_difference_grad(pol.net, [&] { return historical_log_prob(pol, o, a); });
    add("historical_log_prob", max_relative_error(flatten_grads(analytic), fd));
  }

  // temperature objective with respect to log_alpha
  {
    Temperature temp;
    temp.auto_tune = true;
    temp.log_alpha = std::log(0.37);
    temp.target_entropy = -2.0;
    std::vector<double> lps(16);
    for (auto& v : lps) v = rng.uniform(-4.0, 1.0);
    const double mean_lp = stats::mean(lps);
    const double analytic = temp.alpha() * (-mean_lp - temp.target_entropy);
    const double h = 1e-6;
    auto j_of = [&](double log_alpha) {
      const double alpha = std::exp(log_alpha);
      return -alpha * mean_lp - alpha * temp.target_entropy;
    };
    const double fd = (j_of(temp.log_alpha + h) - j_of(temp.log_alpha - h)) / (2.0 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-6});
    add("temperature_objective", std::fabs(analytic - fd) / denom);
  }

  return report;
}

}  // namespace his::verify
