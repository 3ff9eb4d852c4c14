#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vbev/numerics/ops.hpp"
#include "vbev/numerics/rng.hpp"

namespace vbev {

// Ordered registry of named trainable tensors.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> t) {
    t.node().requires_grad = true;
    for (const auto& [n, _] : items_) {
      if (n == name) throw ContractError("duplicate parameter name: " + name);
    }
    items_.emplace_back(std::move(name), std::move(t));
  }
  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [_, t] : items_) out.push_back(t);
    return out;
  }
  bool contains_prefix(const std::string& prefix) const {
    for (const auto& [n, _] : items_)
      if (n.rfind(prefix, 0) == 0) return true;
    return false;
  }
  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
};

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Buffer<T> v(numel_of(shape));
  for (auto& x : v) x = T(rng.normal(0.0, stddev));
  return Tensor<T>::from_buffer(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> xavier_tensor(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  Buffer<T> v(fan_in * fan_out);
  for (auto& x : v) x = T(rng.uniform(-a, a));
  return Tensor<T>::from_buffer({fan_in, fan_out}, std::move(v), true);
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(xavier_tensor<T>(in, out, rng)), bias(Tensor<T>::zeros({out}, true)) {}

  static Linear zero(std::size_t in, std::size_t out) {
    Linear l;
    l.weight = Tensor<T>::zeros({in, out}, true);
    l.bias = Tensor<T>::zeros({out}, true);
    return l;
  }
  static Linear identity(std::size_t c) {
    Linear l = zero(c, c);
    for (std::size_t i = 0; i < c; ++i) l.weight.data()[i * c + i] = T(1);
    return l;
  }

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t c)
      : gamma(Tensor<T>::full({c}, T(1), true)), beta(Tensor<T>::zeros({c}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
  }
};

// Stack of linear layers with ReLU between them (none after the last).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Rng& rng) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers.emplace_back(widths[i], widths[i + 1], rng);
  }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].register_params(ps, prefix + "." + std::to_string(i));
  }
};

// Two-layer feed-forward block with residual and post layer norm.
template <typename T>
struct FeedForward {
  Linear<T> fc1, fc2;
  LayerNorm<T> norm;

  FeedForward() = default;
  FeedForward(std::size_t c, std::size_t hidden, Rng& rng) : fc1(c, hidden, rng), fc2(hidden, c, rng), norm(c) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return norm(add(x, fc2(relu(fc1(x))))); }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    fc1.register_params(ps, prefix + ".fc1");
    fc2.register_params(ps, prefix + ".fc2");
    norm.register_params(ps, prefix + ".norm");
  }
};

}  // namespace vbev
