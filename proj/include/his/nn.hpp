#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "his/rng.hpp"

namespace his::nn {

enum class Activation { Identity, Relu, Tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  throw std::logic_error("unknown activation");
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct Layer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
};

// A dense multi-layer perceptron: rectifier hidden layers, identity or tanh
// head. Plain value type; copies are deep.
struct ParamSet {
  std::vector<Layer> layers;
  Activation hidden = Activation::Relu;
  Activation head = Activation::Identity;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& l : layers) {
      for (auto& v : l.w) fn(v);
      for (auto& v : l.b) fn(v);
    }
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& l : layers) {
      for (const auto& v : l.w) fn(v);
      for (const auto& v : l.b) fn(v);
    }
  }

  std::size_t num_params() const {
    std::size_t c = 0;
    for_each([&](const double&) { ++c; });
    return c;
  }

  void fill(double v) {
    for_each([v](double& x) { x = v; });
  }

  ParamSet zeros_like() const {
    ParamSet z = *this;
    z.fill(0.0);
    return z;
  }

  // this += scale * other, shapes must match
  void axpy(double scale, const ParamSet& other) {
    if (layers.size() != other.layers.size()) throw std::invalid_argument("axpy: shape mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].w.size() != other.layers[l].w.size() ||
          layers[l].b.size() != other.layers[l].b.size())
        throw std::invalid_argument("axpy: shape mismatch");
      for (std::size_t k = 0; k < layers[l].w.size(); ++k)
        layers[l].w[k] += scale * other.layers[l].w[k];
      for (std::size_t k = 0; k < layers[l].b.size(); ++k)
        layers[l].b[k] += scale * other.layers[l].b[k];
    }
  }

  void scale(double s) {
    for_each([s](double& x) { x *= s; });
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const double& x) { ok = ok && std::isfinite(x); });
    return ok;
  }
};

// dims = {in, h1, ..., out}; weights uniform in +-sqrt(6/(fan_in+fan_out)),
// biases zero.
inline ParamSet make_mlp(std::span<const int> dims, Activation head, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in/out dims");
  ParamSet p;
  p.head = head;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    if (layer.in < 1 || layer.out < 1) throw std::invalid_argument("make_mlp: bad layer dim");
    const double bound = std::sqrt(6.0 / (layer.in + layer.out));
    layer.w.resize(static_cast<std::size_t>(layer.in) * layer.out);
    for (auto& w : layer.w) w = rng.uniform(-bound, bound);
    layer.b.assign(static_cast<std::size_t>(layer.out), 0.0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// Cached pre-activations from one forward pass; everything backward() needs
// to reproduce exact reverse-mode gradients.
struct Tape {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;  // z = W x + b per layer
};

namespace detail {

inline double apply_act(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
  }
  throw std::logic_error("unknown activation");
}

inline double act_grad(Activation a, double z) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  throw std::logic_error("unknown activation");
}

}  // namespace detail

inline std::vector<double> forward(const ParamSet& p, std::span<const double> x,
                                   Tape* tape = nullptr) {
  if (p.layers.empty()) throw std::invalid_argument("forward: empty network");
  if (static_cast<int>(x.size()) != p.input_dim())
    throw std::invalid_argument("forward: input size mismatch");
  if (tape) {
    tape->input.assign(x.begin(), x.end());
    tape->pre.resize(p.layers.size());
  }
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const Layer& layer = p.layers[l];
    next.assign(static_cast<std::size_t>(layer.out), 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      double z = layer.b[static_cast<std::size_t>(o)];
      for (int i = 0; i < layer.in; ++i) z += row[i] * cur[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = z;
    }
    if (tape) tape->pre[l] = next;
    const Activation act = (l + 1 == p.layers.size()) ? p.head : p.hidden;
    for (auto& v : next) v = detail::apply_act(act, v);
    cur.swap(next);
  }
  return cur;
}

// Reverse-mode gradient of out_grad . output with respect to all parameters
// (accumulated into grad_accum, which must be zeros_like or a running sum)
// and optionally the input.
inline void backward(const ParamSet& p, const Tape& tape, std::span<const double> out_grad,
                     ParamSet& grad_accum, std::vector<double>* input_grad = nullptr) {
  if (tape.pre.size() != p.layers.size()) throw std::invalid_argument("backward: stale tape");
  if (static_cast<int>(out_grad.size()) != p.output_dim())
    throw std::invalid_argument("backward: out_grad size mismatch");
  if (grad_accum.layers.size() != p.layers.size())
    throw std::invalid_argument("backward: grad accumulator shape mismatch");

  // activations entering each layer, recomputed from the cached
  // pre-activations
  std::vector<double> delta(out_grad.begin(), out_grad.end());
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const Layer& layer = p.layers[li];
    const Activation act = (li + 1 == p.layers.size()) ? p.head : p.hidden;
    for (int o = 0; o < layer.out; ++o)
      delta[static_cast<std::size_t>(o)] *= detail::act_grad(act, tape.pre[li][static_cast<std::size_t>(o)]);

    // layer input = activation of previous layer (or the tape input)
    std::vector<double> below;
    const std::vector<double>* in_act;
    if (li == 0) {
      in_act = &tape.input;
    } else {
      below.resize(tape.pre[li - 1].size());
      const Activation prev_act = p.hidden;
      for (std::size_t k = 0; k < below.size(); ++k)
        below[k] = detail::apply_act(prev_act, tape.pre[li - 1][k]);
      in_act = &below;
    }

    Layer& g = grad_accum.layers[li];
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      g.b[static_cast<std::size_t>(o)] += d;
      double* grow = g.w.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) grow[i] += d * (*in_act)[static_cast<std::size_t>(i)];
    }

    if (li > 0 || input_grad) {
      std::vector<double> prev(static_cast<std::size_t>(layer.in), 0.0);
      for (int o = 0; o < layer.out; ++o) {
        const double d = delta[static_cast<std::size_t>(o)];
        const double* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
        for (int i = 0; i < layer.in; ++i) prev[static_cast<std::size_t>(i)] += d * row[i];
      }
      if (li == 0) {
        *input_grad = std::move(prev);
        break;
      }
      delta.swap(prev);
    }
  }
}

struct OptimState {
  ParamSet m;  // first-moment accumulator, shaped like the owner
  ParamSet v;  // second-moment accumulator
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline OptimState make_optim(const ParamSet& owner, double lr) {
  OptimState o;
  o.m = owner.zeros_like();
  o.v = owner.zeros_like();
  o.lr = lr;
  return o;
}

// Adaptive-moment descent step with bias correction. Throws on non-finite
// gradients without touching the parameters.
inline void adam_step(ParamSet& params, const ParamSet& grads, OptimState& opt) {
  if (!grads.all_finite()) throw std::invalid_argument("adam_step: non-finite gradient");
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                      std::vector<double>& m, std::vector<double>& v) {
      if (p.size() != g.size()) throw std::invalid_argument("adam_step: shape mismatch");
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
        v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        p[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
      }
    };
    update(params.layers[l].w, grads.layers[l].w, opt.m.layers[l].w, opt.v.layers[l].w);
    update(params.layers[l].b, grads.layers[l].b, opt.m.layers[l].b, opt.v.layers[l].b);
  }
}

// target <- (1 - tau) * target + tau * main; tau is the weight on main.
inline void soft_update(ParamSet& target, const ParamSet& main, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("soft_update: tau in [0,1]");
  if (target.layers.size() != main.layers.size())
    throw std::invalid_argument("soft_update: shape mismatch");
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    auto blend = [tau](std::vector<double>& t, const std::vector<double>& s) {
      if (t.size() != s.size()) throw std::invalid_argument("soft_update: shape mismatch");
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = (1.0 - tau) * t[k] + tau * s[k];
    };
    blend(target.layers[l].w, main.layers[l].w);
    blend(target.layers[l].b, main.layers[l].b);
  }
}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const ParamSet& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers)
    layers.push_back({{"in", l.in}, {"out", l.out}, {"w", l.w}, {"b", l.b}});
  return nlohmann::json{{"format_version", kCheckpointVersion},
                        {"hidden", to_string(p.hidden)},
                        {"head", to_string(p.head)},
                        {"layers", layers}};
}

inline ParamSet paramset_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kCheckpointVersion)
    throw std::invalid_argument("checkpoint: unsupported format version");
  ParamSet p;
  p.hidden = activation_from_string(j.at("hidden").get<std::string>());
  p.head = activation_from_string(j.at("head").get<std::string>());
  for (const auto& lj : j.at("layers")) {
    Layer l;
    l.in = lj.at("in").get<int>();
    l.out = lj.at("out").get<int>();
    l.w = lj.at("w").get<std::vector<double>>();
    l.b = lj.at("b").get<std::vector<double>>();
    if (l.w.size() != static_cast<std::size_t>(l.in) * l.out ||
        l.b.size() != static_cast<std::size_t>(l.out))
      throw std::invalid_argument("checkpoint: layer shape mismatch");
    p.layers.push_back(std::move(l));
  }
  if (p.layers.empty()) throw std::invalid_argument("checkpoint: no layers");
  for (std::size_t l = 0; l + 1 < p.layers.size(); ++l)
    if (p.layers[l].out != p.layers[l + 1].in)
      throw std::invalid_argument("checkpoint: layer dimensions do not chain");
  return p;
}

}  // namespace his::nn
