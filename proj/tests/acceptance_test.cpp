// Acceptance battery: one test per criterion, each printing a PASS/FAIL line
// with the measured quantity next to its pinned tolerance.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "his/boxcox.hpp"
#include "his/coopgame.hpp"
#include "his/stats.hpp"
#include "his/trainer.hpp"
#include "his/valuation.hpp"
#include "his/verify.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[criterion %2d] %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(pass) << "criterion " << criterion << ": " << detail;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<his::CharacteristicGame> seeded_games(std::uint64_t seed, int count,
                                                  bool include_nonconvex) {
  his::Rng rng(seed);
  std::vector<his::CharacteristicGame> games;
  for (int k = 0; k < count; ++k) {
    his::CharacteristicGame g = his::generate_convex_game(rng, 2 + k % 5);
    if (include_nonconvex && k % 2 == 1) g = his::verify::break_convexity(g);
    games.push_back(std::move(g));
  }
  return games;
}

// shared across criteria 10 and 11: per-mode medians of steps-to-threshold
struct LearningResults {
  std::map<std::string, std::vector<double>> steps;   // inf when never crossed
  std::map<std::string, std::vector<double>> walls;
  bool ran = false;
};

LearningResults& learning_results() {
  static LearningResults r;
  return r;
}

constexpr int kLearningSeeds = 5;
constexpr double kThresholdFrac = 0.9;

void run_learning_suite() {
  LearningResults& out = learning_results();
  if (out.ran) return;
  out.ran = true;
  for (const std::string mode : {"full", "share", "current_action"}) {
    for (int seed = 1; seed <= kLearningSeeds; ++seed) {
      his::RunConfig cfg;  // desk-scale defaults: quad_coupled, n=3, D=2, 50k steps
      cfg.ablation = mode;
      cfg.seed = static_cast<std::uint64_t>(seed);
      const auto env = his::make_env(cfg);
      const double threshold = kThresholdFrac * env->optimal_episode_return();
      const auto res = his::run_training(cfg, "", threshold);
      const auto crossed = his::steps_to_threshold(res.rows, threshold);
      out.steps[mode].push_back(crossed ? static_cast<double>(*crossed)
                                        : std::numeric_limits<double>::infinity());
      out.walls[mode].push_back(res.summary.wall_seconds);
    }
  }
}

}  // namespace

TEST(Acceptance, Criterion01HybridEfficiency) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  const auto games = seeded_games(101, 200, /*include_nonconvex=*/true);
  for (const auto& game : games) {
    const his::Allocation x = his::hybrid_allocation(game);
    worst = std::max(worst, std::fabs(x.total() - game.grand_value()));
  }
  const double secs = elapsed_s(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "hybrid efficiency: max |sum x - v(N)| = %.3g (tol 1e-9) over 200 games in %.2fs "
                "(budget 5s)",
                worst, secs);
  report(1, worst <= 1e-9 && secs < 5.0, buf);
}

TEST(Acceptance, Criterion02HybridStability) {
  const auto t0 = std::chrono::steady_clock::now();
  int failures = 0;
  const auto games = seeded_games(102, 200, /*include_nonconvex=*/false);
  for (const auto& game : games)
    if (!his::is_in_core(game, his::hybrid_allocation(game))) ++failures;
  const double secs = elapsed_s(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "hybrid Core membership: %d/200 convex games failed in %.2fs (budget 10s)",
                failures, secs);
  report(2, failures == 0 && secs < 10.0, buf);
}

TEST(Acceptance, Criterion03ShapleyStability) {
  const auto t0 = std::chrono::steady_clock::now();
  int failures = 0;
  const auto games = seeded_games(102, 200, /*include_nonconvex=*/false);
  for (const auto& game : games)
    if (!his::is_in_core(game, his::shapley_allocation(game))) ++failures;
  const double secs = elapsed_s(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "pure Shapley Core membership: %d/200 convex games failed in %.2fs (budget 10s)",
                failures, secs);
  report(3, failures == 0 && secs < 10.0, buf);
}

TEST(Acceptance, Criterion04ShapleyAxioms) {
  his::Rng rng(104);
  double worst_eff = 0.0, worst_sym = 0.0, worst_dummy = 0.0, worst_oracle = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int n = 2 + k % 5;
    // base convex game, then agents 0/1 made symmetric and the last agent a dummy
    const double a = rng.uniform(0.25, 2.0);
    std::vector<double> w(static_cast<std::size_t>(n));
    for (auto& wi : w) wi = rng.uniform(0.0, 1.0);
    if (n >= 2) w[1] = w[0];
    std::vector<double> values(std::size_t{1} << n, 0.0);
    for (std::uint32_t m = 1; m < values.size(); ++m) {
      const his::Coalition c{m};
      const his::Coalition active = c.without(n - 1);  // last agent contributes nothing
      double v = a * active.size() * active.size();
      for (int i = 0; i < n - 1; ++i)
        if (active.contains(i)) v += w[static_cast<std::size_t>(i)];
      values[m] = v;
    }
    const his::CharacteristicGame game(n, std::move(values));

    double total = 0.0;
    for (int i = 0; i < n; ++i) total += his::shapley_exact(game, i);
    worst_eff = std::max(worst_eff, std::fabs(total - game.grand_value()));
    if (n >= 3)
      worst_sym = std::max(worst_sym,
                           std::fabs(his::shapley_exact(game, 0) - his::shapley_exact(game, 1)));
    worst_dummy = std::max(worst_dummy, std::fabs(his::shapley_exact(game, n - 1)));
    if (n <= 6)
      for (int i = 0; i < n; ++i)
        worst_oracle = std::max(worst_oracle,
                                std::fabs(his::shapley_exact(game, i) -
                                          oracles::shapley_permutation_average(game, i)));
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "axioms: |dummy|=%.3g (tol 1e-12), symmetry gap=%.3g (tol 1e-9), efficiency "
                "gap=%.3g (tol 1e-9), subset-vs-permutation gap=%.3g (tol 1e-9)",
                worst_dummy, worst_sym, worst_eff, worst_oracle);
  report(4,
         worst_dummy <= 1e-12 && worst_sym <= 1e-9 && worst_eff <= 1e-9 && worst_oracle <= 1e-9,
         buf);
}

TEST(Acceptance, Criterion05CoalitionSamplerDistribution) {
  const auto rep = his::verify::distributions(105, 100000);
  double min_p = 1.0;
  bool pass = true;
  for (const auto& c : rep.checks) {
    pass = pass && c.pass;
    const auto pos = c.detail.find("p=");
    if (pos != std::string::npos) min_p = std::min(min_p, std::stod(c.detail.substr(pos + 2)));
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "coalition sampler chi-square over n=2..5, 1e5 draws: min p = %.4f (need > 0.001)",
                min_p);
  report(5, pass && min_p > 1e-3, buf);
}

TEST(Acceptance, Criterion06ShapleyQConsistency) {
  const std::vector<double> w{0.8, -0.5, 0.25};
  his::nn::ParamSet lin;
  {
    his::nn::Layer l;
    l.in = 1 + 3;
    l.out = 1;
    l.w = {0.0, w[0], w[1], w[2]};
    l.b = {0.0};
    lin.layers.push_back(std::move(l));
  }
  his::TwinCritics critics;
  critics.q1 = lin;
  critics.q2 = lin;
  critics.q1_target = lin;
  critics.q2_target = lin;
  critics.state_dim = 1;
  critics.num_agents = 3;
  critics.action_dim = 1;

  const std::vector<double> s{0.3}, a{0.4, 0.9, -0.6};
  double worst_exact = 0.0;
  for (int i = 0; i < 3; ++i)
    worst_exact = std::max(worst_exact,
                           std::fabs(his::shapley_q_exhaustive(critics, s, a, i) -
                                     0.5 * w[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)]));

  const int trials = 10000;
  his::Rng rng(106);
  std::vector<double> estimates(trials);
  for (int k = 0; k < trials; ++k) estimates[k] = his::shapley_q(critics, s, a, 1, 2, rng);
  const double mean = his::stats::mean(estimates);
  const double se =
      his::stats::stddev(estimates) / std::sqrt(static_cast<double>(trials));
  const double exact = 0.5 * w[1] * a[1];
  const double gap = std::fabs(mean - exact);
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "linear-critic Shapley Q: exhaustive gap=%.3g (tol 1e-9); sampled M=2 over 1e4 "
                "draws gap=%.3g vs 3SE+eps=%.3g",
                worst_exact, gap, 3.0 * se + 1e-12);
  report(6, worst_exact <= 1e-9 && gap <= 3.0 * se + 1e-12, buf);
}

TEST(Acceptance, Criterion07HistoricalLikelihoodRoundTrip) {
  his::Rng rng(107);
  const std::vector<int> hidden{64, 64};
  const his::GaussianPolicy pol = his::make_policy(4, 2, hidden, rng);
  int checked = 0;
  double worst = 0.0;
  while (checked < 10000) {
    std::vector<double> obs(4);
    for (auto& v : obs) v = rng.uniform(-1.0, 1.0);
    const his::PolicySample s = his::sample(pol, obs, rng);
    bool in_range = true;
    for (double u : s.pre_squash) in_range = in_range && std::fabs(u) <= 4.0;
    if (!in_range) continue;
    ++checked;
    worst = std::max(worst, std::fabs(his::historical_log_prob(pol, obs, s.action) - s.log_prob));
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "historical vs fresh log-likelihood over 1e4 pairs: max gap = %.3g (tol 1e-6)",
                worst);
  report(7, worst <= 1e-6, buf);
}

TEST(Acceptance, Criterion08GradientSuite) {
  const auto rep = his::verify::gradients(108);
  double worst = 0.0;
  bool pass = true;
  for (const auto& c : rep.checks) {
    pass = pass && c.pass;
    const auto pos = c.detail.find("max_rel_err=");
    if (pos != std::string::npos)
      worst = std::max(worst, std::stod(c.detail.substr(pos + 12)));
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "finite-difference suite (critic, SAC term, Shapley term, temperature, "
                "likelihoods): max rel err = %.3g (tol 1e-4)",
                worst);
  report(8, pass && worst <= 1e-4, buf);
}

TEST(Acceptance, Criterion09BoxCox) {
  his::Rng rng(109);
  bool order_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = 3 + static_cast<int>(rng.index(30));
    std::vector<double> in(static_cast<std::size_t>(m));
    for (auto& x : in) x = rng.uniform(-15.0, 5.0);
    std::sort(in.begin(), in.end());
    bool distinct = true;
    for (std::size_t k = 1; k < in.size(); ++k) distinct = distinct && in[k] != in[k - 1];
    if (!distinct) continue;
    const auto out = his::bc_training_transform(in);
    for (std::size_t k = 1; k < out.size(); ++k) order_ok = order_ok && out[k - 1] < out[k];
  }

  double worst_cont = 0.0;
  for (double x = 0.1; x <= 10.0; x += 0.05)
    worst_cont = std::max(worst_cont, std::fabs(his::bc_transform(x, 1e-9) - std::log(x)));

  int skew_fails = 0;
  for (int batch = 0; batch < 10; ++batch) {
    std::vector<double> lognormal(256);
    for (auto& v : lognormal) v = std::exp(rng.normal());
    const auto out = his::bc_training_transform(lognormal);
    if (std::fabs(his::stats::skewness(out)) >
        std::fabs(his::stats::skewness(lognormal)) + 0.1)
      ++skew_fails;
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "order preserved on 1e3 vectors: %s; lambda continuity gap=%.3g (tol 1e-6); "
                "skewness regressions: %d/10",
                order_ok ? "yes" : "NO", worst_cont, skew_fails);
  report(9, order_ok && worst_cont <= 1e-6 && skew_fails == 0, buf);
}

TEST(Acceptance, Criterion10LearningReaches90PercentOptimum) {
  run_learning_suite();
  const auto& r = learning_results();
  const double median_steps = his::stats::median(r.steps.at("full"));
  double worst_wall = 0.0;
  for (double wsec : r.walls.at("full")) worst_wall = std::max(worst_wall, wsec);
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "median steps to 90%% optimum (full, 5 seeds) = %.0f (budget 50000); slowest "
                "seed wall = %.1fs (budget 600s)",
                median_steps, worst_wall);
  report(10, median_steps <= 50000.0 && worst_wall < 600.0, buf);
}

TEST(Acceptance, Criterion11AblationOrdering) {
  run_learning_suite();
  const auto& r = learning_results();
  const double full = his::stats::median(r.steps.at("full"));
  const double share = his::stats::median(r.steps.at("share"));
  const double current = his::stats::median(r.steps.at("current_action"));

  // reported, not asserted: final-return variance of full vs no_bc over short
  // fixed-budget runs
  std::vector<double> finals_full, finals_nobc;
  for (int seed = 1; seed <= kLearningSeeds; ++seed) {
    for (const std::string mode : {"full", "no_bc"}) {
      his::RunConfig cfg;
      cfg.ablation = mode;
      cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.episodes = 600;  // 15k steps
      const auto res = his::run_training(cfg, "");
      (mode == "full" ? finals_full : finals_nobc).push_back(res.summary.final_ret_mean);
    }
  }
  const double var_full = his::stats::variance(finals_full);
  const double var_nobc = his::stats::variance(finals_nobc);
  std::printf("[criterion 11:note] final-return variance full=%.4f no_bc=%.4f (%s) -- "
              "reported, not asserted\n",
              var_full, var_nobc,
              var_nobc > var_full ? "no_bc more variable" : "no_bc not more variable");

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "median steps-to-90%%: full=%.0f share=%.0f current_action=%.0f "
                "(need full <= both)",
                full, share, current);
  report(11, full <= share && full <= current, buf);
}

TEST(Acceptance, Criterion12DummyAgentDiagnostic) {
  std::vector<double> ratios;
  for (std::uint64_t seed : {1, 2, 3}) {
    // the base task is a one-step bandit (constant state), so gamma = 0 is its
    // exact discount and the critic reduces to plain reward regression
    his::RunConfig cfg;
    cfg.dummy_agent = 2;
    cfg.seed = seed;
    cfg.episodes = 1600;  // 40k steps
    cfg.hidden = {32, 32};
    cfg.batch_size = 512;
    cfg.exploration_noise = 0.1;
    cfg.gamma = 0.0;
    his::Trainer t(cfg);
    while (!t.finished()) t.train_iteration();

    // exhaustive Shapley Q over the uniform-action warmup segment
    std::vector<double> acc(3, 0.0);
    const int count = 500;
    for (int k = 0; k < count; ++k) {
      const auto& tr = t.buffer().get(t.buffer().oldest_id() + k);
      for (int i = 0; i < 3; ++i)
        acc[static_cast<std::size_t>(i)] +=
            std::fabs(his::shapley_q_exhaustive(t.critics(), tr.state, tr.joint_action, i));
    }
    for (auto& v : acc) v /= count;
    ratios.push_back(acc[2] / (0.5 * (acc[0] + acc[1])));
  }
  const double median_ratio = his::stats::median(ratios);
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "dummy-agent |Shapley Q| ratio per seed = %.3f/%.3f/%.3f, median = %.3f "
                "(need < 0.10)",
                ratios[0], ratios[1], ratios[2], median_ratio);
  report(12, median_ratio < 0.10, buf);
}

TEST(Acceptance, Criterion13Determinism) {
  his::RunConfig cfg;
  cfg.episodes = 100;  // 2.5k steps
  const fs::path d1 = fs::temp_directory_path() / "his_acc_det1";
  const fs::path d2 = fs::temp_directory_path() / "his_acc_det2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  his::run_training(cfg, d1.string());
  his::run_training(cfg, d2.string());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string m1 = slurp(d1 / "metrics.csv");
  const std::string m2 = slurp(d2 / "metrics.csv");
  fs::remove_all(d1);
  fs::remove_all(d2);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "identical (config, seed) metrics: %zu bytes, byte-equal: %s",
                m1.size(), m1 == m2 ? "yes" : "NO");
  report(13, !m1.empty() && m1 == m2, buf);
}
