#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "his/rng.hpp"

namespace his {

// Absolute tolerance for all game-side inequality/equality checks. Game
// values are exact-input reals, so no relative scaling is applied.
inline constexpr double kGameTol = 1e-9;

// Exact enumeration is bounded by the coalition bitset width.
inline constexpr int kMaxAgents = 20;

// A coalition over agents 0..n-1, one bit per agent.
struct Coalition {
  std::uint32_t bits = 0;

  static Coalition empty() { return {}; }
  static Coalition grand(int n) { return {(n == 0) ? 0u : (~0u >> (32 - n))}; }
  static Coalition single(int i) { return {1u << i}; }

  bool contains(int i) const { return (bits >> i) & 1u; }
  Coalition with(int i) const { return {bits | (1u << i)}; }
  Coalition without(int i) const { return {bits & ~(1u << i)}; }
  int size() const { return std::popcount(bits); }
  bool empty_set() const { return bits == 0; }

  std::vector<int> members(int n) const {
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
      if (contains(i)) out.push_back(i);
    return out;
  }

  friend bool operator==(const Coalition&, const Coalition&) = default;
};

// Characteristic-function game (N, v): a total map from all 2^n coalitions to
// real values with v(empty) = 0. Immutable after construction.
class CharacteristicGame {
 public:
  CharacteristicGame(int n, std::vector<double> values) : n_(n), values_(std::move(values)) {
    if (n_ < 1 || n_ > kMaxAgents)
      throw std::invalid_argument("CharacteristicGame: n must be in [1, 20]");
    if (values_.size() != (std::size_t{1} << n_))
      throw std::invalid_argument("CharacteristicGame: need a value for all 2^n coalitions");
    if (std::fabs(values_[0]) > 0.0)
      throw std::invalid_argument("CharacteristicGame: v(empty) must be 0");
  }

  int n() const { return n_; }
  double value(Coalition c) const { return values_[c.bits]; }
  double grand_value() const { return values_.back(); }
  std::size_t num_coalitions() const { return values_.size(); }

  // File format: {"n": int, "values": {"<sorted comma-joined members>": v, ...}}
  // with "" keying the empty coalition. Every coalition must be present.
  static CharacteristicGame from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  int n_;
  std::vector<double> values_;  // indexed by coalition bitmask
};

struct Allocation {
  std::vector<double> payoffs;

  double total() const {
    double s = 0.0;
    for (double p : payoffs) s += p;
    return s;
  }
  double coalition_sum(Coalition c) const {
    double s = 0.0;
    for (std::size_t i = 0; i < payoffs.size(); ++i)
      if (c.contains(static_cast<int>(i))) s += payoffs[i];
    return s;
  }
};

namespace detail {

inline std::string coalition_key(Coalition c, int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (!c.contains(i)) continue;
    if (!key.empty()) key += ',';
    key += std::to_string(i);
  }
  return key;
}

inline Coalition parse_coalition_key(const std::string& key, int n) {
  Coalition c;
  if (key.empty()) return c;
  std::stringstream ss(key);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t pos = 0;
    int i = -1;
    try {
      i = std::stoi(tok, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("game file: bad member '" + tok + "' in key '" + key + "'");
    }
    if (pos != tok.size() || i < 0 || i >= n)
      throw std::invalid_argument("game file: member out of range in key '" + key + "'");
    if (c.contains(i))
      throw std::invalid_argument("game file: duplicate member in key '" + key + "'");
    c = c.with(i);
  }
  return c;
}

}  // namespace detail

inline CharacteristicGame CharacteristicGame::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("n") || !j.contains("values"))
    throw std::invalid_argument("game file: expected object with 'n' and 'values'");
  const int n = j.at("n").get<int>();
  if (n < 1 || n > kMaxAgents) throw std::invalid_argument("game file: n must be in [1, 20]");
  const auto& vals = j.at("values");
  if (!vals.is_object()) throw std::invalid_argument("game file: 'values' must be an object");

  std::vector<double> values(std::size_t{1} << n,
                             std::numeric_limits<double>::quiet_NaN());
  for (const auto& [key, v] : vals.items()) {
    const Coalition c = detail::parse_coalition_key(key, n);
    if (!v.is_number()) throw std::invalid_argument("game file: value for '" + key + "' not a number");
    if (!std::isnan(values[c.bits]))
      throw std::invalid_argument("game file: coalition '" + key + "' specified twice");
    values[c.bits] = v.get<double>();
  }
  for (std::size_t m = 0; m < values.size(); ++m) {
    if (std::isnan(values[m]))
      throw std::invalid_argument("game file: missing coalition '" +
                                  detail::coalition_key(Coalition{static_cast<std::uint32_t>(m)}, n) + "'");
  }
  if (std::fabs(values[0]) > 0.0)
    throw std::invalid_argument("game file: v(empty) must be 0");
  return CharacteristicGame(n, std::move(values));
}

inline nlohmann::json CharacteristicGame::to_json() const {
  nlohmann::json vals = nlohmann::json::object();
  for (std::size_t m = 0; m < values_.size(); ++m)
    vals[detail::coalition_key(Coalition{static_cast<std::uint32_t>(m)}, n_)] = values_[m];
  return nlohmann::json{{"n", n_}, {"values", vals}};
}

// Weight of a size-c predecessor coalition in an n-agent game:
// c!(n-c-1)!/n!, i.e. the probability that a uniform random ordering puts
// exactly that coalition before agent i. Log-factorial space for n > 12
// keeps the factorials inside double range.
inline double coalition_weight(int c_size, int n) {
  if (n < 1) throw std::domain_error("coalition_weight: n >= 1 required");
  if (c_size < 0 || c_size >= n)
    throw std::domain_error("coalition_weight: need 0 <= |C| <= n-1");
  if (n <= 12) {
    double num = 1.0;
    for (int k = 2; k <= c_size; ++k) num *= k;
    for (int k = 2; k <= n - c_size - 1; ++k) num *= k;
    double den = 1.0;
    for (int k = 2; k <= n; ++k) den *= k;
    return num / den;
  }
  return std::exp(std::lgamma(c_size + 1.0) + std::lgamma(n - c_size + 0.0) -
                  std::lgamma(n + 1.0));
}

// Supermodularity witness: a pair (C, D) with v(C|D) + v(C&D) < v(C) + v(D).
inline std::optional<std::pair<Coalition, Coalition>> find_convexity_violation(
    const CharacteristicGame& game) {
  if (game.n() > 10)
    throw std::domain_error("is_convex: exhaustive check infeasible for n > 10");
  const std::uint32_t top = static_cast<std::uint32_t>(game.num_coalitions());
  for (std::uint32_t c = 0; c < top; ++c) {
    for (std::uint32_t d = 0; d < top; ++d) {
      const double lhs = game.value(Coalition{c | d}) + game.value(Coalition{c & d});
      const double rhs = game.value(Coalition{c}) + game.value(Coalition{d});
      if (lhs < rhs - kGameTol) return std::make_pair(Coalition{c}, Coalition{d});
    }
  }
  return std::nullopt;
}

inline bool is_convex(const CharacteristicGame& game) {
  return !find_convexity_violation(game).has_value();
}

// v(C u D) >= v(C) + v(D) over all disjoint pairs.
inline bool is_superadditive(const CharacteristicGame& game) {
  if (game.n() > 10)
    throw std::domain_error("is_superadditive: exhaustive check infeasible for n > 10");
  const std::uint32_t top = static_cast<std::uint32_t>(game.num_coalitions());
  for (std::uint32_t c = 0; c < top; ++c) {
    const std::uint32_t comp = (top - 1) & ~c;
    // all submasks of the complement, including the empty set
    std::uint32_t d = comp;
    while (true) {
      if (game.value(Coalition{c | d}) <
          game.value(Coalition{c}) + game.value(Coalition{d}) - kGameTol)
        return false;
      if (d == 0) break;
      d = (d - 1) & comp;
    }
  }
  return true;
}

// Exact Shapley value of agent i: sum over all C subseteq N\{i} of
// w(|C|, n) * (v(C u {i}) - v(C)).
inline double shapley_exact(const CharacteristicGame& game, int i) {
  const int n = game.n();
  if (i < 0 || i >= n) throw std::invalid_argument("shapley_exact: agent out of range");
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) w[k] = coalition_weight(k, n);

  const std::uint32_t others = Coalition::grand(n).without(i).bits;
  double phi = 0.0;
  std::uint32_t c = others;
  while (true) {
    const Coalition coal{c};
    phi += w[coal.size()] * (game.value(coal.with(i)) - game.value(coal));
    if (c == 0) break;
    c = (c - 1) & others;
  }
  return phi;
}

inline Allocation shapley_allocation(const CharacteristicGame& game) {
  Allocation x;
  x.payoffs.resize(static_cast<std::size_t>(game.n()));
  for (int i = 0; i < game.n(); ++i) x.payoffs[i] = shapley_exact(game, i);
  return x;
}

// Hybrid assignment: an equal share of half the grand value plus the Shapley
// value of the halved game. The sum telescopes back to v(N) for any game.
inline Allocation hybrid_allocation(const CharacteristicGame& game) {
  std::vector<double> half(game.num_coalitions());
  for (std::uint32_t m = 0; m < game.num_coalitions(); ++m)
    half[m] = 0.5 * game.value(Coalition{m});
  const CharacteristicGame half_game(game.n(), std::move(half));

  Allocation x;
  x.payoffs.resize(static_cast<std::size_t>(game.n()));
  const double base = game.grand_value() / (2.0 * game.n());
  for (int i = 0; i < game.n(); ++i) x.payoffs[i] = base + shapley_exact(half_game, i);
  return x;
}

inline bool is_efficient(const CharacteristicGame& game, const Allocation& x) {
  if (x.payoffs.size() != static_cast<std::size_t>(game.n()))
    throw std::invalid_argument("is_efficient: allocation length mismatch");
  return std::fabs(x.total() - game.grand_value()) <= kGameTol;
}

// Core membership: no coalition can improve by deviating, x(C) >= v(C) for all C.
inline bool is_in_core(const CharacteristicGame& game, const Allocation& x) {
  if (x.payoffs.size() != static_cast<std::size_t>(game.n()))
    throw std::invalid_argument("is_in_core: allocation length mismatch");
  for (std::uint32_t m = 0; m < game.num_coalitions(); ++m) {
    const Coalition c{m};
    if (x.coalition_sum(c) < game.value(c) - kGameTol) return false;
  }
  return true;
}

// Test-fixture generator: v(C) = a|C|^2 + b|C| + sum_{i in C} w_i with a > 0,
// b, w_i >= 0. The cardinality part is convex in |C| and the additive part is
// modular, so the game is supermodular by construction.
inline CharacteristicGame generate_convex_game(Rng& rng, int n) {
  if (n < 2 || n > 8) throw std::invalid_argument("generate_convex_game: n must be in [2, 8]");
  const double a = rng.uniform(0.25, 2.0);
  const double b = rng.uniform(0.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(n));
  for (auto& wi : w) wi = rng.uniform(0.0, 1.0);

  std::vector<double> values(std::size_t{1} << n);
  for (std::uint32_t m = 0; m < values.size(); ++m) {
    const Coalition c{m};
    const double k = c.size();
    double v = a * k * k + b * k;
    for (int i = 0; i < n; ++i)
      if (c.contains(i)) v += w[static_cast<std::size_t>(i)];
    values[m] = v;
  }
  return CharacteristicGame(n, std::move(values));
}

}  // namespace his
