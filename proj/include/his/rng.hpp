#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace his {

// Single deterministic random source. Every stochastic component takes one of
// these by reference; nothing in the library touches global RNG state, so a
// run is a pure function of (config, seed).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }

  std::size_t index(std::size_t size) {
    return std::uniform_int_distribution<std::size_t>(0, size - 1)(gen_);
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), gen_);
    return p;
  }

  // Independent child stream, e.g. for evaluation episodes that must not
  // perturb the training stream.
  Rng fork() { return Rng(gen_()); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace his
