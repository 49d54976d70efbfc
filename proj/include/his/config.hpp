#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace his {

enum class AblationMode { Full, Share, Local, NoBc, CurrentAction };

inline std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Full: return "full";
    case AblationMode::Share: return "share";
    case AblationMode::Local: return "local";
    case AblationMode::NoBc: return "no_bc";
    case AblationMode::CurrentAction: return "current_action";
  }
  throw std::logic_error("unknown ablation mode");
}

inline AblationMode ablation_from_string(const std::string& s) {
  if (s == "full") return AblationMode::Full;
  if (s == "share") return AblationMode::Share;
  if (s == "local") return AblationMode::Local;
  if (s == "no_bc") return AblationMode::NoBc;
  if (s == "current_action") return AblationMode::CurrentAction;
  throw std::invalid_argument("unknown ablation mode '" + s + "'");
}

struct ConfigError : std::runtime_error {
  ConfigError(int line_number, const std::string& what)
      : std::runtime_error(line_number > 0
                               ? "line " + std::to_string(line_number) + ": " + what
                               : what),
        line(line_number) {}
  int line;
};

// The complete hyperparameter record for one run. Flat key = value text file;
// every field has a default, unknown keys are rejected with the line number.
struct RunConfig {
  std::string env = "quad_coupled";
  int n = 3;
  int action_dim = 2;
  int episodes = 2000;          // K
  int steps_per_episode = 25;   // T
  int sample_times = 2;         // M, coalitions per Shapley estimate
  double log_adjustment = 10.0; // beta, likelihood floor width
  int batch_size = 256;
  double gamma = 0.99;
  bool auto_alpha = true;
  double fixed_alpha = 0.2;     // used when auto_alpha = false
  double alpha_init = 0.2;
  double target_entropy = std::nan("");  // default: -action_dim per agent, summed
  int mini_epochs = 1;          // e
  double tau = 0.005;
  bool literal_polyak = false;  // mix tau onto the target side instead of the main side
  int n_step = 1;
  double lr_actor = 1e-3;
  double lr_critic = 1e-3;
  double lr_alpha = 3e-4;
  int warmup_steps = 1000;
  int train_interval = 50;
  int updates_per_train = 1;
  double exploration_noise = 0.0;
  double grad_clip = 0.0;       // 0 disables
  std::uint64_t seed = 1;
  std::string ablation = "full";
  std::vector<int> hidden = {64, 64};
  std::size_t buffer_capacity = 100000;
  double lambda_grid_lo = -2.0;
  double lambda_grid_hi = 2.0;
  int checkpoint_interval = 0;  // train iterations; 0 = final checkpoint only
  std::uint64_t env_seed = 2024;
  int dummy_agent = -1;         // >= 0 wraps the env with a dummy player
  int quad_out_dim = 2;
  double quad_offset = 4.0;
  int spread_landmarks = 3;

  int total_steps() const { return episodes * steps_per_episode; }
  AblationMode mode() const { return ablation_from_string(ablation); }
  double effective_target_entropy() const {
    return std::isnan(target_entropy) ? -static_cast<double>(n) * action_dim : target_entropy;
  }

  void validate() const;
  void set(const std::string& key, const std::string& value, int line = 0);

  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);

  nlohmann::json to_json() const;
  std::string to_text() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

template <typename T>
T parse_number(const std::string& value, int line) {
  std::istringstream ss(value);
  T out{};
  ss >> out;
  if (ss.fail() || !ss.eof()) throw ConfigError(line, "expected a number, got '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& value, int line) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(line, "expected true/false, got '" + value + "'");
}

inline std::vector<int> parse_int_list(const std::string& value, int line) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) throw ConfigError(line, "empty entry in list '" + value + "'");
    out.push_back(parse_number<int>(tok, line));
  }
  if (out.empty()) throw ConfigError(line, "empty list");
  return out;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& raw, int line) {
  using namespace detail;
  const std::string value = unquote(trim(raw));
  if (key == "env") env = value;
  else if (key == "n") n = parse_number<int>(value, line);
  else if (key == "action_dim") action_dim = parse_number<int>(value, line);
  else if (key == "episodes") episodes = parse_number<int>(value, line);
  else if (key == "steps_per_episode") steps_per_episode = parse_number<int>(value, line);
  else if (key == "sample_times") sample_times = parse_number<int>(value, line);
  else if (key == "log_adjustment") log_adjustment = parse_number<double>(value, line);
  else if (key == "batch_size") batch_size = parse_number<int>(value, line);
  else if (key == "gamma") gamma = parse_number<double>(value, line);
  else if (key == "auto_alpha") auto_alpha = parse_bool(value, line);
  else if (key == "fixed_alpha") fixed_alpha = parse_number<double>(value, line);
  else if (key == "alpha_init") alpha_init = parse_number<double>(value, line);
  else if (key == "target_entropy") target_entropy = parse_number<double>(value, line);
  else if (key == "mini_epochs") mini_epochs = parse_number<int>(value, line);
  else if (key == "tau") tau = parse_number<double>(value, line);
  else if (key == "literal_polyak") literal_polyak = parse_bool(value, line);
  else if (key == "n_step") n_step = parse_number<int>(value, line);
  else if (key == "lr_actor") lr_actor = parse_number<double>(value, line);
  else if (key == "lr_critic") lr_critic = parse_number<double>(value, line);
  else if (key == "lr_alpha") lr_alpha = parse_number<double>(value, line);
  else if (key == "warmup_steps") warmup_steps = parse_number<int>(value, line);
  else if (key == "train_interval") train_interval = parse_number<int>(value, line);
  else if (key == "updates_per_train") updates_per_train = parse_number<int>(value, line);
  else if (key == "exploration_noise") exploration_noise = parse_number<double>(value, line);
  else if (key == "grad_clip") grad_clip = parse_number<double>(value, line);
  else if (key == "seed") seed = parse_number<std::uint64_t>(value, line);
  else if (key == "ablation") ablation = value;
  else if (key == "hidden") hidden = parse_int_list(value, line);
  else if (key == "buffer_capacity") buffer_capacity = parse_number<std::size_t>(value, line);
  else if (key == "lambda_grid_lo") lambda_grid_lo = parse_number<double>(value, line);
  else if (key == "lambda_grid_hi") lambda_grid_hi = parse_number<double>(value, line);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_number<int>(value, line);
  else if (key == "env_seed") env_seed = parse_number<std::uint64_t>(value, line);
  else if (key == "dummy_agent") dummy_agent = parse_number<int>(value, line);
  else if (key == "quad_out_dim") quad_out_dim = parse_number<int>(value, line);
  else if (key == "quad_offset") quad_offset = parse_number<double>(value, line);
  else if (key == "spread_landmarks") spread_landmarks = parse_number<int>(value, line);
  else throw ConfigError(line, "unknown key '" + key + "'");
}

inline void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(0, what);
  };
  require(env == "quad_coupled" || env == "spread_mini", "env must be quad_coupled or spread_mini");
  require(n >= 1 && n <= 20, "n must be in [1, 20]");
  require(action_dim >= 1, "action_dim must be positive");
  require(episodes >= 1 && steps_per_episode >= 1, "episodes and steps_per_episode must be positive");
  require(sample_times >= 1, "sample_times must be >= 1");
  require(log_adjustment > 0.0, "log_adjustment must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must be in [0, 1]");
  require(fixed_alpha > 0.0 && alpha_init > 0.0, "alpha values must be positive");
  require(mini_epochs >= 1, "mini_epochs must be >= 1");
  require(tau >= 0.0 && tau <= 1.0, "tau must be in [0, 1]");
  require(n_step >= 1, "n_step must be >= 1");
  require(lr_actor > 0.0 && lr_critic > 0.0 && lr_alpha > 0.0, "learning rates must be positive");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(train_interval >= 1, "train_interval must be >= 1");
  require(updates_per_train >= 0, "updates_per_train must be >= 0");
  require(exploration_noise >= 0.0, "exploration_noise must be >= 0");
  require(grad_clip >= 0.0, "grad_clip must be >= 0");
  require(!hidden.empty(), "hidden must name at least one layer");
  for (int h : hidden) require(h >= 1, "hidden sizes must be positive");
  require(buffer_capacity >= static_cast<std::size_t>(batch_size), "buffer_capacity must cover a batch");
  require(lambda_grid_lo < lambda_grid_hi, "lambda grid bounds out of order");
  require(checkpoint_interval >= 0, "checkpoint_interval must be >= 0");
  require(dummy_agent < n, "dummy_agent out of range");
  require(quad_out_dim >= 1, "quad_out_dim must be positive");
  require(spread_landmarks >= 1, "spread_landmarks must be positive");
  ablation_from_string(ablation);  // throws on an unknown mode
}

inline RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(lineno, "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = line.substr(eq + 1);
    if (key.empty()) throw ConfigError(lineno, "missing key before '='");
    cfg.set(key, value, lineno);
  }
  cfg.validate();
  return cfg;
}

inline RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

inline nlohmann::json RunConfig::to_json() const {
  return nlohmann::json{
      {"env", env}, {"n", n}, {"action_dim", action_dim}, {"episodes", episodes},
      {"steps_per_episode", steps_per_episode}, {"sample_times", sample_times},
      {"log_adjustment", log_adjustment}, {"batch_size", batch_size}, {"gamma", gamma},
      {"auto_alpha", auto_alpha}, {"fixed_alpha", fixed_alpha}, {"alpha_init", alpha_init},
      {"target_entropy", effective_target_entropy()}, {"mini_epochs", mini_epochs},
      {"tau", tau}, {"literal_polyak", literal_polyak}, {"n_step", n_step},
      {"lr_actor", lr_actor}, {"lr_critic", lr_critic}, {"lr_alpha", lr_alpha},
      {"warmup_steps", warmup_steps}, {"train_interval", train_interval},
      {"updates_per_train", updates_per_train}, {"exploration_noise", exploration_noise},
      {"grad_clip", grad_clip}, {"seed", seed}, {"ablation", ablation}, {"hidden", hidden},
      {"buffer_capacity", buffer_capacity}, {"lambda_grid_lo", lambda_grid_lo},
      {"lambda_grid_hi", lambda_grid_hi}, {"checkpoint_interval", checkpoint_interval},
      {"env_seed", env_seed}, {"dummy_agent", dummy_agent}, {"quad_out_dim", quad_out_dim},
      {"quad_offset", quad_offset}, {"spread_landmarks", spread_landmarks}};
}

inline std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "env = " << env << "\n";
  out << "n = " << n << "\n";
  out << "action_dim = " << action_dim << "\n";
  out << "episodes = " << episodes << "\n";
  out << "steps_per_episode = " << steps_per_episode << "\n";
  out << "sample_times = " << sample_times << "\n";
  out << "log_adjustment = " << log_adjustment << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "gamma = " << gamma << "\n";
  out << "auto_alpha = " << (auto_alpha ? "true" : "false") << "\n";
  out << "fixed_alpha = " << fixed_alpha << "\n";
  out << "alpha_init = " << alpha_init << "\n";
  out << "target_entropy = " << effective_target_entropy() << "\n";
  out << "mini_epochs = " << mini_epochs << "\n";
  out << "tau = " << tau << "\n";
  out << "literal_polyak = " << (literal_polyak ? "true" : "false") << "\n";
  out << "n_step = " << n_step << "\n";
  out << "lr_actor = " << lr_actor << "\n";
  out << "lr_critic = " << lr_critic << "\n";
  out << "lr_alpha = " << lr_alpha << "\n";
  out << "warmup_steps = " << warmup_steps << "\n";
  out << "train_interval = " << train_interval << "\n";
  out << "updates_per_train = " << updates_per_train << "\n";
  out << "exploration_noise = " << exploration_noise << "\n";
  out << "grad_clip = " << grad_clip << "\n";
  out << "seed = " << seed << "\n";
  out << "ablation = " << ablation << "\n";
  out << "hidden = ";
  for (std::size_t i = 0; i < hidden.size(); ++i) out << (i ? "," : "") << hidden[i];
  out << "\n";
  out << "buffer_capacity = " << buffer_capacity << "\n";
  out << "lambda_grid_lo = " << lambda_grid_lo << "\n";
  out << "lambda_grid_hi = " << lambda_grid_hi << "\n";
  out << "checkpoint_interval = " << checkpoint_interval << "\n";
  out << "env_seed = " << env_seed << "\n";
  out << "dummy_agent = " << dummy_agent << "\n";
  out << "quad_out_dim = " << quad_out_dim << "\n";
  out << "quad_offset = " << quad_offset << "\n";
  out << "spread_landmarks = " << spread_landmarks << "\n";
  return out.str();
}

}  // namespace his
