#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "his/coopgame.hpp"
#include "his/rng.hpp"
#include "his/valuation.hpp"
#include "his/verify.hpp"

using his::Coalition;
using his::Temperature;
using his::TwinCritics;

namespace {

his::nn::ParamSet constant_net(int in_dim, double value) {
  his::nn::ParamSet p;
  his::nn::Layer l;
  l.in = in_dim;
  l.out = 1;
  l.w.assign(static_cast<std::size_t>(in_dim), 0.0);
  l.b = {value};
  p.layers.push_back(std::move(l));
  return p;
}

// Q(s, a) = sum_k w_k a_k, no state dependence
his::nn::ParamSet linear_action_net(int state_dim, const std::vector<double>& w) {
  his::nn::ParamSet p;
  his::nn::Layer l;
  l.in = state_dim + static_cast<int>(w.size());
  l.out = 1;
  l.w.assign(static_cast<std::size_t>(l.in), 0.0);
  for (std::size_t k = 0; k < w.size(); ++k) l.w[static_cast<std::size_t>(state_dim) + k] = w[k];
  l.b = {0.0};
  p.layers.push_back(std::move(l));
  return p;
}

TwinCritics twin_from(const his::nn::ParamSet& q1, const his::nn::ParamSet& q2, int state_dim,
                      int n, int d) {
  TwinCritics c;
  c.q1 = q1;
  c.q2 = q2;
  c.q1_target = q1;
  c.q2_target = q2;
  c.state_dim = state_dim;
  c.num_agents = n;
  c.action_dim = d;
  return c;
}

}  // namespace

TEST(QMin, TakesTheSmallerCritic) {
  const auto c2 = constant_net(3, 2.0);
  const auto c3 = constant_net(3, 3.0);
  const std::vector<double> state{0.5}, action{0.1, -0.2};
  EXPECT_EQ(his::q_min(c2, c3, state, action), 2.0);
  EXPECT_EQ(his::q_min(c3, c2, state, action), 2.0);
  EXPECT_EQ(his::q_min(c2, c2, state, action), 2.0);
}

TEST(QMin, BoundsBothCriticsOnRandomNets) {
  his::Rng rng(4);
  const std::vector<int> hidden{8};
  TwinCritics c = his::make_critics(2, 2, 1, hidden, rng);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> s{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    std::vector<double> a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const double qm = his::q_min_main(c, s, a);
    EXPECT_LE(qm, his::q_eval(c.q1, s, a) + 1e-15);
    EXPECT_LE(qm, his::q_eval(c.q2, s, a) + 1e-15);
  }
}

TEST(QMinActionGrad, MatchesInputPerturbation) {
  his::Rng rng(5);
  const std::vector<int> hidden{8, 8};
  TwinCritics c = his::make_critics(2, 2, 2, hidden, rng);
  for (auto& b : c.q2.layers.back().b) b += 1.0;  // keep the min away from ties
  std::vector<double> s{0.3, -0.4};
  std::vector<double> a{0.2, -0.1, 0.5, 0.7};
  std::vector<double> grad(a.size(), 0.0);
  const double base = his::q_min_main_with_action_grad(c, s, a, grad);
  EXPECT_EQ(base, his::q_min_main(c, s, a));
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double h = 1e-6, saved = a[j];
    a[j] = saved + h;
    const double up = his::q_min_main(c, s, a);
    a[j] = saved - h;
    const double down = his::q_min_main(c, s, a);
    a[j] = saved;
    const double fd = (up - down) / (2.0 * h);
    EXPECT_NEAR(grad[j], fd, 1e-5 * std::max(1.0, std::fabs(fd)));
  }
}

TEST(TdTarget, HandComputedBootstrap) {
  TwinCritics c = twin_from(constant_net(3, 2.0), constant_net(3, 2.0), 1, 1, 2);
  Temperature temp;
  temp.log_alpha = std::log(0.2);
  const std::vector<double> s{0.0}, a{0.0, 0.0};
  const std::vector<double> logps{-1.0, -2.0};  // sums to -3
  const double y = his::td_target(c, temp, 1.0, s, a, logps, 0.99, false);
  EXPECT_NEAR(y, 1.0 + 0.99 * (2.0 - 0.2 * -3.0), 1e-12);  // 3.574
  EXPECT_NEAR(y, 3.574, 1e-12);
}

TEST(TdTarget, TerminalDropsBootstrap) {
  TwinCritics c = twin_from(constant_net(3, 50.0), constant_net(3, 50.0), 1, 1, 2);
  Temperature temp;
  const std::vector<double> s{0.0}, a{0.0, 0.0}, logps{-1.0, -1.0};
  EXPECT_EQ(his::td_target(c, temp, 1.25, s, a, logps, 0.99, true), 1.25);
}

TEST(TdTarget, ZeroAlphaLeavesPlainBootstrap) {
  TwinCritics c = twin_from(constant_net(3, 2.0), constant_net(3, 2.0), 1, 1, 2);
  Temperature temp;
  temp.log_alpha = -1e9;  // alpha -> 0
  const std::vector<double> s{0.0}, a{0.0, 0.0}, logps{-1.0, -2.0};
  EXPECT_NEAR(his::td_target(c, temp, 1.0, s, a, logps, 0.99, false), 1.0 + 0.99 * 2.0, 1e-9);
}

TEST(TdTarget, MonotoneInRewardAndBootstrap) {
  Temperature temp;
  const std::vector<double> s{0.0}, a{0.0, 0.0}, logps{-1.0, -1.0};
  TwinCritics lo = twin_from(constant_net(3, 1.0), constant_net(3, 1.0), 1, 1, 2);
  TwinCritics hi = twin_from(constant_net(3, 2.0), constant_net(3, 2.0), 1, 1, 2);
  EXPECT_LT(his::td_target(lo, temp, 1.0, s, a, logps, 0.99, false),
            his::td_target(lo, temp, 2.0, s, a, logps, 0.99, false));
  EXPECT_LT(his::td_target(lo, temp, 1.0, s, a, logps, 0.99, false),
            his::td_target(hi, temp, 1.0, s, a, logps, 0.99, false));
}

TEST(CriticLoss, ZeroWhenPredictionsMatchTargets) {
  TwinCritics c = twin_from(constant_net(2, 0.0), constant_net(2, 0.0), 1, 1, 1);
  const std::vector<std::vector<double>> states{{0.2}, {-0.3}};
  const std::vector<std::vector<double>> actions{{0.1}, {0.4}};
  const std::vector<double> targets{0.0, 0.0};
  const his::CriticUpdate u = his::critic_loss_and_grads(c, states, actions, targets);
  EXPECT_EQ(u.loss, 0.0);
  u.g1.for_each([](const double& v) { EXPECT_EQ(v, 0.0); });
  u.g2.for_each([](const double& v) { EXPECT_EQ(v, 0.0); });
}

TEST(CriticLoss, SingleSampleScalarForm) {
  TwinCritics c = twin_from(constant_net(2, 0.5), constant_net(2, 0.5), 1, 1, 1);
  const his::CriticUpdate u =
      his::critic_loss_and_grads(c, {{0.0}}, {{0.0}}, std::vector<double>{2.0});
  EXPECT_NEAR(u.loss, 0.5 * (2.0 - 0.5) * (2.0 - 0.5), 1e-12);
}

TEST(CriticLoss, RejectsNonFiniteTargets) {
  TwinCritics c = twin_from(constant_net(2, 0.0), constant_net(2, 0.0), 1, 1, 1);
  const std::vector<double> bad{std::numeric_limits<double>::infinity()};
  EXPECT_THROW(his::critic_loss_and_grads(c, {{0.0}}, {{0.0}}, bad), std::invalid_argument);
}

TEST(TemperatureStep, StationaryAtTargetEntropy) {
  Temperature temp;
  temp.auto_tune = true;
  temp.log_alpha = std::log(0.2);
  temp.target_entropy = -2.0;
  // entropy estimate mean(-log pi) equals the target exactly
  const std::vector<double> lps{2.0, 2.0, 2.0};
  const Temperature out = his::temperature_step(temp, lps, 0.1);
  EXPECT_EQ(out.log_alpha, temp.log_alpha);
}

TEST(TemperatureStep, AlphaDecreasesWhenEntropyAboveTarget) {
  Temperature temp;
  temp.auto_tune = true;
  temp.log_alpha = std::log(0.2);
  temp.target_entropy = -2.0;
  const std::vector<double> lps{-5.0, -5.0};  // entropy estimate 5 > 2
  const Temperature out = his::temperature_step(temp, lps, 0.1);
  EXPECT_LT(out.log_alpha, temp.log_alpha);
}

TEST(TemperatureStep, FixedAlphaNeverMoves) {
  Temperature temp;
  temp.auto_tune = false;
  temp.log_alpha = std::log(0.2);
  const std::vector<double> lps{-50.0};
  const Temperature out = his::temperature_step(temp, lps, 0.1);
  EXPECT_EQ(out.log_alpha, std::log(0.2));
  EXPECT_NEAR(out.alpha(), 0.2, 1e-15);
}

TEST(SampleCoalition, SingleAgentAlwaysEmpty) {
  his::Rng rng(1);
  for (int k = 0; k < 100; ++k) EXPECT_TRUE(his::sample_coalition(rng, 1, 0).empty_set());
}

TEST(SampleCoalition, TwoAgentHalfSplit) {
  his::Rng rng(2);
  int empty = 0;
  const int draws = 20000;
  for (int k = 0; k < draws; ++k)
    if (his::sample_coalition(rng, 2, 0).empty_set()) ++empty;
  EXPECT_NEAR(empty / static_cast<double>(draws), 0.5, 0.02);
}

TEST(SampleCoalition, NeverContainsTheAgentItself) {
  his::Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const Coalition c = his::sample_coalition(rng, 5, 2);
    EXPECT_FALSE(c.contains(2));
  }
}

TEST(SampleCoalition, FrequenciesMatchPredecessorLaw) {
  const auto report = his::verify::distributions(99, 100000);
  for (const auto& check : report.checks) EXPECT_TRUE(check.pass) << check.name << " " << check.detail;
}

TEST(MaskJointAction, EndpointsAndMiddleBlock) {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  const auto all = his::mask_joint_action(a, Coalition::grand(3), 3, 2);
  EXPECT_EQ(all, a);
  const auto none = his::mask_joint_action(a, Coalition::empty(), 3, 2);
  for (double v : none) EXPECT_EQ(v, 0.0);
  const auto some = his::mask_joint_action(a, Coalition::single(0).with(2), 3, 2);
  EXPECT_EQ(some, (std::vector<double>{1.0, 2.0, 0.0, 0.0, 5.0, 6.0}));
}

TEST(AmcMarginal, CriticIgnoringAgentGivesZero) {
  // linear critic with zero weight on agent 1's block
  TwinCritics c = twin_from(linear_action_net(1, {0.7, 0.0, 0.3}),
                            linear_action_net(1, {0.7, 0.0, 0.3}), 1, 3, 1);
  const std::vector<double> s{0.0}, a{0.5, -0.9, 0.25};
  for (std::uint32_t m = 0; m < 8; ++m) {
    const Coalition coal{m};
    if (coal.contains(1)) continue;
    EXPECT_EQ(his::amc_marginal(c, s, a, coal, 1), 0.0);
  }
}

TEST(AmcMarginal, EmptyCoalitionUnrollsDefinition) {
  his::Rng rng(6);
  const std::vector<int> hidden{6};
  TwinCritics c = his::make_critics(2, 3, 1, hidden, rng);
  const std::vector<double> s{0.1, 0.2}, a{0.5, -0.5, 0.3};
  const auto only_i = his::mask_joint_action(a, Coalition::single(1), 3, 1);
  const auto zeros = his::mask_joint_action(a, Coalition::empty(), 3, 1);
  EXPECT_NEAR(his::amc_marginal(c, s, a, Coalition::empty(), 1),
              0.5 * (his::q_min_main(c, s, only_i) - his::q_min_main(c, s, zeros)), 1e-12);
}

TEST(AmcMarginal, LinearCriticGivesHalfWeightedAction) {
  const std::vector<double> w{0.8, -0.5, 0.25};
  TwinCritics c = twin_from(linear_action_net(1, w), linear_action_net(1, w), 1, 3, 1);
  const std::vector<double> s{0.0}, a{0.4, 0.9, -0.6};
  for (int i = 0; i < 3; ++i) {
    for (std::uint32_t m = 0; m < 8; ++m) {
      const Coalition coal{m};
      if (coal.contains(i)) continue;
      EXPECT_NEAR(his::amc_marginal(c, s, a, coal, i),
                  0.5 * w[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)], 1e-12)
          << "agent " << i << " coalition " << m;
    }
  }
}

TEST(AmcMarginal, RejectsAgentAlreadyInCoalition) {
  TwinCritics c = twin_from(constant_net(4, 0.0), constant_net(4, 0.0), 1, 3, 1);
  const std::vector<double> s{0.0}, a{0.1, 0.2, 0.3};
  EXPECT_THROW(his::amc_marginal(c, s, a, Coalition::single(1), 1), std::invalid_argument);
}

TEST(ShapleyQ, LinearCriticExactForAnyM) {
  const std::vector<double> w{0.8, -0.5, 0.25};
  TwinCritics c = twin_from(linear_action_net(1, w), linear_action_net(1, w), 1, 3, 1);
  const std::vector<double> s{0.0}, a{0.4, 0.9, -0.6};
  his::Rng rng(7);
  for (int m_samples : {1, 2, 8}) {
    for (int i = 0; i < 3; ++i)
      EXPECT_NEAR(his::shapley_q(c, s, a, i, m_samples, rng),
                  0.5 * w[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(ShapleyQ, ExhaustiveMatchesManualWeightedSum) {
  his::Rng rng(8);
  const std::vector<int> hidden{8};
  TwinCritics c = his::make_critics(2, 4, 1, hidden, rng);
  const std::vector<double> s{0.3, -0.3};
  const std::vector<double> a{0.5, -0.25, 0.75, 0.1};
  for (int i = 0; i < 4; ++i) {
    // manual enumeration over all subsets of the other agents
    double want = 0.0;
    const std::uint32_t others = Coalition::grand(4).without(i).bits;
    std::uint32_t m = others;
    while (true) {
      const Coalition coal{m};
      want += his::coalition_weight(coal.size(), 4) * his::amc_marginal(c, s, a, coal, i);
      if (m == 0) break;
      m = (m - 1) & others;
    }
    EXPECT_NEAR(his::shapley_q_exhaustive(c, s, a, i), want, 1e-12);
  }
}

TEST(ShapleyQ, SampledEstimatorConvergesToExhaustive) {
  his::Rng rng(9);
  const std::vector<int> hidden{8};
  TwinCritics c = his::make_critics(2, 4, 1, hidden, rng);
  const std::vector<double> s{0.1, 0.9};
  const std::vector<double> a{0.5, -0.25, 0.75, 0.1};
  const int agent = 2;
  const double exact = his::shapley_q_exhaustive(c, s, a, agent);

  const int trials = 4000, m_samples = 2;
  std::vector<double> estimates(trials);
  his::Rng est_rng(10);
  for (int k = 0; k < trials; ++k)
    estimates[k] = his::shapley_q(c, s, a, agent, m_samples, est_rng);
  const double mean = his::stats::mean(estimates);
  const double se = his::stats::stddev(estimates) / std::sqrt(static_cast<double>(trials));
  EXPECT_NEAR(mean, exact, 3.0 * se + 1e-12);
}

TEST(ShapleyQ, EfficiencyTelescopesAtTheCriticLevel) {
  his::Rng rng(11);
  const std::vector<int> hidden{8, 8};
  for (int n : {2, 3, 4, 6}) {
    TwinCritics c = his::make_critics(3, n, 2, hidden, rng);
    std::vector<double> s{0.2, -0.4, 0.6};
    std::vector<double> a(static_cast<std::size_t>(n) * 2);
    for (auto& v : a) v = rng.uniform(-0.9, 0.9);
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += his::shapley_q_exhaustive(c, s, a, i);
    const auto zeros = his::mask_joint_action(a, Coalition::empty(), n, 2);
    const double want = 0.5 * (his::q_min_main(c, s, a) - his::q_min_main(c, s, zeros));
    EXPECT_NEAR(total, want, 1e-9) << "n=" << n;
  }
}
