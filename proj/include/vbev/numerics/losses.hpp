#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "vbev/numerics/ops.hpp"

namespace vbev {

struct InvalidTarget : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

// log(1 + e^x) without overflow.
template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Focal term on a logit for a positive (target 1) and a down-weighted
// negative. Returns (loss, dloss/dlogit).
template <typename T>
std::pair<T, T> focal_positive(T z, T alpha_exp) {
  const T p = stable_sigmoid(z);
  const T log_p = -softplus(-z);
  const T q = T(1) - p;
  const T qa = std::pow(q, alpha_exp);
  return {-qa * log_p, alpha_exp * p * qa * log_p - qa * q};
}

template <typename T>
std::pair<T, T> focal_negative(T z, T alpha_exp, T weight) {
  const T p = stable_sigmoid(z);
  const T log_q = -softplus(z);
  const T pa = std::pow(p, alpha_exp);
  return {-weight * pa * log_q, weight * (pa * p - alpha_exp * pa * (T(1) - p) * log_q)};
}

}  // namespace detail

struct GaussianFocalParams {
  double alpha = 2.0;
  double beta = 4.0;
};

// CenterNet-style gaussian focal loss on logits. Pixels with target exactly 1
// are positives; all others are negatives weighted by (1 - y)^beta. The sum
// is normalized by max(1, #positives).
template <typename T>
Tensor<T> gaussian_focal_loss(const Tensor<T>& logits, std::span<const T> target,
                              GaussianFocalParams fp = {}) {
  if (target.size() != logits.numel()) throw ShapeError("gaussian_focal_loss: target size mismatch");
  std::size_t npos = 0;
  for (T y : target) {
    if (!(y >= T(0) && y <= T(1))) throw InvalidTarget("heatmap target outside [0, 1]");
    npos += (y == T(1));
  }
  const T norm = T(1) / T(std::max<std::size_t>(1, npos));
  const T a = T(fp.alpha), b = T(fp.beta);
  Buffer<T> dz(logits.numel());
  T total = 0;
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const T z = logits.ptr()[i];
    const auto [l, d] = target[i] == T(1)
                            ? detail::focal_positive(z, a)
                            : detail::focal_negative(z, a, std::pow(T(1) - target[i], b));
    total += l;
    dz[i] = d * norm;
  }
  return make_result<T>(
      {1}, Buffer<T>{total * norm}, {logits},
      [dz = std::move(dz)](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < dz.size(); ++i) g[i] += o.grad[0] * dz[i];
      },
      "gaussian_focal_loss");
}

// The same loss evaluated directly on probabilities, with 0 * log 0 := 0.
template <typename T>
T gaussian_focal_loss_probs(std::span<const T> probs, std::span<const T> target,
                            GaussianFocalParams fp = {}) {
  if (target.size() != probs.size()) throw ShapeError("gaussian_focal_loss_probs: size mismatch");
  auto xlogy = [](T x, T y) { return x == T(0) ? T(0) : x * std::log(y); };
  std::size_t npos = 0;
  T total = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const T y = target[i], p = probs[i];
    if (!(y >= T(0) && y <= T(1))) throw InvalidTarget("heatmap target outside [0, 1]");
    if (y == T(1)) {
      ++npos;
      total -= xlogy(std::pow(T(1) - p, T(fp.alpha)), p);
    } else {
      total -= std::pow(T(1) - y, T(fp.beta)) * xlogy(std::pow(p, T(fp.alpha)), T(1) - p);
    }
  }
  return total / T(std::max<std::size_t>(1, npos));
}

// Sigmoid focal loss for classification: targets are {0, 1} per logit.
// Returns sum / normalizer.
template <typename T>
Tensor<T> sigmoid_focal_loss(const Tensor<T>& logits, std::span<const T> target, T normalizer,
                             T alpha = T(0.25), T gamma = T(2)) {
  if (target.size() != logits.numel()) throw ShapeError("sigmoid_focal_loss: target size mismatch");
  Buffer<T> dz(logits.numel());
  T total = 0;
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const T z = logits.ptr()[i];
    if (target[i] == T(1)) {
      const auto [l, d] = detail::focal_positive(z, gamma);
      total += alpha * l;
      dz[i] = alpha * d / normalizer;
    } else {
      const auto [l, d] = detail::focal_negative(z, gamma, T(1));
      total += (T(1) - alpha) * l;
      dz[i] = (T(1) - alpha) * d / normalizer;
    }
  }
  return make_result<T>(
      {1}, Buffer<T>{total / normalizer}, {logits},
      [dz = std::move(dz)](Node<T>& o) {
        if (T* g = grad_sink(o, 0))
          for (std::size_t i = 0; i < dz.size(); ++i) g[i] += o.grad[0] * dz[i];
      },
      "sigmoid_focal_loss");
}

}  // namespace vbev
