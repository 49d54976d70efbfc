// Command-line front end: training runs, ablation suites, game-theory
// utilities, verification batteries and hyperparameter sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "his/config.hpp"
#include "his/coopgame.hpp"
#include "his/stats.hpp"
#include "his/trainer.hpp"
#include "his/verify.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string default_out_root() {
  if (const char* env = std::getenv("HIS_OUT_DIR")) return env;
  return "out";
}

his::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                           std::optional<std::uint64_t> seed,
                           std::optional<std::string> ablation) {
  his::RunConfig cfg = path.empty() ? his::RunConfig{} : his::RunConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw his::ConfigError(0, "override '" + kv + "' must look like key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed) cfg.seed = *seed;
  if (ablation) cfg.ablation = *ablation;
  cfg.validate();
  return cfg;
}

his::CharacteristicGame load_game(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open game file '" + path + "'");
  nlohmann::json j;
  in >> j;
  return his::CharacteristicGame::from_json(j);
}

void print_payoffs(const his::Allocation& x) {
  for (std::size_t i = 0; i < x.payoffs.size(); ++i)
    std::cout << (i ? " " : "") << x.payoffs[i];
  std::cout << "\n";
}

std::string coalition_str(his::Coalition c, int n) {
  std::string s = "{";
  bool first = true;
  for (int i = 0; i < n; ++i) {
    if (!c.contains(i)) continue;
    if (!first) s += ",";
    s += std::to_string(i);
    first = false;
  }
  return s + "}";
}

int cmd_game(const std::string& action, const std::string& file) {
  his::CharacteristicGame game = load_game(file);
  if (action == "shapley") {
    print_payoffs(his::shapley_allocation(game));
  } else if (action == "core") {
    const his::Allocation x = his::shapley_allocation(game);
    std::cout << "shapley allocation: ";
    print_payoffs(x);
    std::cout << "core: " << (his::is_in_core(game, x) ? "true" : "false") << "\n";
  } else if (action == "convex") {
    const auto violation = his::find_convexity_violation(game);
    if (!violation) {
      std::cout << "true\n";
    } else {
      std::cout << "false\n";
      std::cout << "violating pair: C=" << coalition_str(violation->first, game.n())
                << " D=" << coalition_str(violation->second, game.n()) << "\n";
    }
  } else if (action == "hybrid") {
    const his::Allocation x = his::hybrid_allocation(game);
    std::cout << "allocation: ";
    print_payoffs(x);
    std::cout << "efficient: " << (his::is_efficient(game, x) ? "true" : "false") << "\n";
    std::cout << "core: " << (his::is_in_core(game, x) ? "true" : "false") << "\n";
  } else {
    throw his::ConfigError(0, "unknown game action '" + action + "'");
  }
  return kExitOk;
}

int cmd_run(const his::RunConfig& cfg, std::string out_dir, bool force, bool print_config) {
  if (print_config) {
    std::cout << cfg.to_text();
    return kExitOk;
  }
  if (out_dir.empty()) out_dir = (fs::path(default_out_root()) / "run").string();
  if (fs::exists(fs::path(out_dir) / "summary.json") && !force)
    throw his::ConfigError(0, "output directory '" + out_dir +
                                  "' holds a completed run (use --force to overwrite)");
  const his::RunResult result = his::run_training(cfg, out_dir);
  std::cout << "steps=" << result.summary.total_steps
            << " episodes=" << result.summary.episodes
            << " final_ret_mean=" << result.summary.final_ret_mean
            << " wall_s=" << result.summary.wall_seconds << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, int count, long draws,
               const std::string& out_path) {
  his::verify::Report report;
  if (suite == "theorems") {
    report = his::verify::theorems(seed, count);
  } else if (suite == "distributions") {
    report = his::verify::distributions(seed, draws);
  } else if (suite == "gradients") {
    report = his::verify::gradients(seed);
  } else {
    throw his::ConfigError(0, "unknown verify suite '" + suite + "'");
  }
  const nlohmann::json j = report.to_json();
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    out << j.dump(2) << "\n";
  }
  for (const auto& c : report.checks)
    std::cout << (c.pass ? "PASS" : "FAIL") << " " << c.name
              << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
  if (!report.pass()) {
    std::cout << "suite " << suite << ": FAIL\n";
    if (out_path.empty()) std::cerr << j.dump(2) << "\n";
    return kExitRuntime;
  }
  std::cout << "suite " << suite << ": PASS\n";
  return kExitOk;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

struct AblateRow {
  std::string mode;
  std::uint64_t seed = 0;
  bool ok = false;
  double final_return = 0.0;
  long steps_to_thresh = -1;  // -1 = never reached
};

int cmd_ablate(const his::RunConfig& base, const std::string& modes_csv,
               const std::string& seeds_csv, std::string out_dir,
               double threshold_frac, std::optional<double> threshold_abs,
               bool stop_at_threshold) {
  const std::vector<std::string> modes = split_csv(modes_csv);
  if (modes.size() < 2) throw his::ConfigError(0, "ablate needs at least two modes");
  for (const auto& m : modes) his::ablation_from_string(m);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_csv(seeds_csv)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) throw his::ConfigError(0, "ablate needs at least one seed");
  if (out_dir.empty()) out_dir = (fs::path(default_out_root()) / "ablate").string();
  fs::create_directories(out_dir);

  double threshold = 0.0;
  if (threshold_abs) {
    threshold = *threshold_abs;
  } else {
    const auto env = his::make_env(base);
    if (!env->has_known_optimum())
      throw his::ConfigError(0, "env has no closed-form optimum; pass --threshold");
    threshold = threshold_frac * env->optimal_episode_return();
  }

  std::vector<AblateRow> rows;
  std::map<std::string, std::vector<double>> finals_by_mode;
  for (const auto& mode : modes) {
    for (const auto seed : seeds) {
      his::RunConfig cfg = base;
      cfg.ablation = mode;
      cfg.seed = seed;
      const std::string run_dir =
          (fs::path(out_dir) / (mode + "_seed" + std::to_string(seed))).string();
      AblateRow row;
      row.mode = mode;
      row.seed = seed;
      try {
        const his::RunResult res = his::run_training(
            cfg, run_dir,
            stop_at_threshold ? std::optional<double>(threshold) : std::nullopt);
        row.ok = true;
        row.final_return = res.summary.final_ret_mean;
        const auto crossed = his::steps_to_threshold(res.rows, threshold);
        row.steps_to_thresh = crossed ? *crossed : -1;
        finals_by_mode[mode].push_back(row.final_return);
      } catch (const std::exception& e) {
        std::cerr << "run " << mode << "/" << seed << " failed: " << e.what() << "\n";
      }
      rows.push_back(row);
      std::cout << "done " << row.mode << " seed=" << row.seed
                << " final=" << row.final_return << " steps_to_threshold="
                << row.steps_to_thresh << "\n";
    }
  }

  std::ofstream csv(fs::path(out_dir) / "comparison.csv", std::ios::binary);
  csv << "mode,seed,final_return,steps_to_threshold\n";
  for (const auto& r : rows)
    csv << r.mode << "," << r.seed << "," << (r.ok ? his::detail::fmt_g(r.final_return) : "nan")
        << "," << r.steps_to_thresh << "\n";

  std::cout << "\nmedian over seeds (threshold=" << threshold << ")\n";
  std::cout << "mode,median_final_return,median_steps_to_threshold\n";
  for (const auto& mode : modes) {
    std::vector<double> finals, steps;
    for (const auto& r : rows) {
      if (r.mode != mode || !r.ok) continue;
      finals.push_back(r.final_return);
      steps.push_back(r.steps_to_thresh < 0 ? std::numeric_limits<double>::infinity()
                                            : static_cast<double>(r.steps_to_thresh));
    }
    if (finals.empty()) {
      std::cout << mode << ",nan,nan\n";
      continue;
    }
    std::cout << mode << "," << his::stats::median(finals) << ","
              << his::stats::median(steps) << "\n";
  }

  // qualitative stability note when both variants are present
  if (finals_by_mode.count("full") && finals_by_mode.count("no_bc") &&
      finals_by_mode["full"].size() > 1 && finals_by_mode["no_bc"].size() > 1) {
    const double var_full = his::stats::variance(finals_by_mode["full"]);
    const double var_nobc = his::stats::variance(finals_by_mode["no_bc"]);
    std::cout << "\nfinal-return variance: full=" << var_full << " no_bc=" << var_nobc
              << (var_nobc > var_full ? " (no_bc more variable)" : " (no_bc not more variable)")
              << "\n";
  }
  return kExitOk;
}

int cmd_sweep(const his::RunConfig& base, const std::vector<std::string>& grid_specs,
              const std::string& seeds_csv, std::string out_dir) {
  if (grid_specs.empty()) throw his::ConfigError(0, "sweep needs at least one --set key=v1,v2");
  std::vector<std::pair<std::string, std::vector<std::string>>> grid;
  for (const auto& spec : grid_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw his::ConfigError(0, "sweep spec '" + spec + "' must look like key=v1,v2");
    grid.emplace_back(spec.substr(0, eq), split_csv(spec.substr(eq + 1)));
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_csv(seeds_csv)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) throw his::ConfigError(0, "sweep needs at least one seed");
  if (out_dir.empty()) out_dir = (fs::path(default_out_root()) / "sweep").string();
  fs::create_directories(out_dir);

  std::ofstream csv(fs::path(out_dir) / "sweep.csv", std::ios::binary);
  for (const auto& [key, _] : grid) csv << key << ",";
  csv << "seed,final_return\n";

  // cross product by counting in mixed radix
  std::vector<std::size_t> idx(grid.size(), 0);
  bool carry = false;
  while (!carry) {
    his::RunConfig cfg = base;
    std::string tag;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      cfg.set(grid[g].first, grid[g].second[idx[g]]);
      tag += grid[g].first + grid[g].second[idx[g]] + "_";
    }
    cfg.validate();
    for (const auto seed : seeds) {
      cfg.seed = seed;
      const std::string run_dir = (fs::path(out_dir) / (tag + "seed" + std::to_string(seed))).string();
      double final_return = std::nan("");
      try {
        final_return = his::run_training(cfg, run_dir).summary.final_ret_mean;
      } catch (const std::exception& e) {
        std::cerr << "run " << tag << "seed" << seed << " failed: " << e.what() << "\n";
      }
      for (std::size_t g = 0; g < grid.size(); ++g) csv << grid[g].second[idx[g]] << ",";
      csv << seed << "," << his::detail::fmt_g(final_return) << "\n";
      std::cout << "done " << tag << "seed=" << seed << " final=" << final_return << "\n";
    }
    carry = true;
    for (std::size_t g = 0; g < grid.size() && carry; ++g) {
      idx[g] += 1;
      if (idx[g] < grid[g].second.size()) {
        carry = false;
      } else {
        idx[g] = 0;
      }
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"historical-interaction Shapley policy gradient toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ablation_override;
  std::vector<std::string> overrides;
  std::uint64_t seed_override = 0;
  bool have_seed = false, force = false, print_config = false;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    cmd->add_option("--set", overrides, "override a config key, key=value")->take_all();
    cmd->add_option("--out", out_dir, "output directory (default $HIS_OUT_DIR)");
    cmd->add_flag("--force", force, "overwrite a completed run");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed_override = s; have_seed = true; },
        "seed override");
  };

  CLI::App* run = app.add_subcommand("run", "train one configuration");
  add_config_opts(run);
  run->add_option("--ablation", ablation_override, "mode: full|share|local|no_bc|current_action");
  run->add_flag("--print-config", print_config, "print the effective config and exit");

  CLI::App* game = app.add_subcommand("game", "game-theory utilities on a game file");
  std::string game_action, game_file;
  game->add_option("action", game_action, "shapley|core|convex|hybrid")->required();
  game->add_option("file", game_file, "game JSON file")->required();

  CLI::App* verify = app.add_subcommand("verify", "run a verification suite");
  std::string suite, report_path;
  std::uint64_t verify_seed = 7;
  int verify_count = 200;
  long verify_draws = 100000;
  verify->add_option("suite", suite, "theorems|distributions|gradients")->required();
  verify->add_option("--seed", verify_seed, "suite seed");
  verify->add_option("--count", verify_count, "number of sampled games");
  verify->add_option("--draws", verify_draws, "sampler draws per cell");
  verify->add_option("--report", report_path, "write the JSON report here");

  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation comparison");
  add_config_opts(ablate);
  std::string modes_csv = "full,share", seeds_csv = "1,2,3,4,5";
  double threshold_frac = 0.9;
  double threshold_abs_val = 0.0;
  bool have_threshold_abs = false, stop_at_threshold = false;
  ablate->add_option("--modes", modes_csv, "comma-separated ablation modes");
  ablate->add_option("--seeds", seeds_csv, "comma-separated seeds");
  ablate->add_option("--threshold-frac", threshold_frac,
                     "threshold as a fraction of the env optimum");
  ablate->add_option_function<double>(
      "--threshold", [&](const double& v) { threshold_abs_val = v; have_threshold_abs = true; },
      "absolute return threshold");
  ablate->add_flag("--stop-at-threshold", stop_at_threshold,
                   "stop each run once the threshold is crossed");

  CLI::App* sweep = app.add_subcommand("sweep", "grid sweep over config keys");
  add_config_opts(sweep);
  std::vector<std::string> sweep_grid;
  std::string sweep_seeds = "1,2,3";
  sweep->add_option("--grid", sweep_grid, "key=v1,v2 grid axis (repeatable)")->take_all();
  sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const auto seed = have_seed ? std::optional<std::uint64_t>(seed_override) : std::nullopt;
    const auto mode = ablation_override.empty() ? std::nullopt
                                                : std::optional<std::string>(ablation_override);
    if (run->parsed())
      return cmd_run(load_config(config_path, overrides, seed, mode), out_dir, force,
                     print_config);
    if (game->parsed()) return cmd_game(game_action, game_file);
    if (verify->parsed())
      return cmd_verify(suite, verify_seed, verify_count, verify_draws, report_path);
    if (ablate->parsed()) {
      const auto thresh = have_threshold_abs ? std::optional<double>(threshold_abs_val)
                                             : std::nullopt;
      return cmd_ablate(load_config(config_path, overrides, seed, std::nullopt), modes_csv,
                        seeds_csv, out_dir, threshold_frac, thresh, stop_at_threshold);
    }
    if (sweep->parsed())
      return cmd_sweep(load_config(config_path, overrides, seed, std::nullopt), sweep_grid,
                       sweep_seeds, out_dir);
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const his::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
