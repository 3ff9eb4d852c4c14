#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vbev/numerics/memory.hpp"

namespace vbev {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidCoordinate : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
// Raised when a NaN or Inf reaches an op boundary.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Precision { test, bench };

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) >= 8 ? Precision::test : Precision::bench;
}

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Buffer<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Buffer<T> v(numel_of(shape), T(0));
    return from_buffer(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    Buffer<T> v(numel_of(shape), fill);
    return from_buffer(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor from(Shape shape, std::span<const T> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size()) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    }
    Buffer<T> v(values.begin(), values.end());
    return from_buffer(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor from(Shape shape, std::initializer_list<T> values, bool requires_grad = false) {
    return from(std::move(shape), std::span<const T>(values.begin(), values.size()), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }
  static Tensor from_buffer(Shape shape, Buffer<T> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size()) {
      throw ShapeError("buffer size mismatch for shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<T> data() { return {node_->value.data(), node_->value.size()}; }
  std::span<const T> data() const { return {node_->value.data(), node_->value.size()}; }
  const T* ptr() const { return node_->value.data(); }
  T* ptr() { return node_->value.data(); }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  std::span<T> grad() { return {node_->grad.data(), node_->grad.size()}; }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const { return node_->value.at(r * node_->shape.at(1) + c); }

  std::vector<T> to_vector() const { return {node_->value.begin(), node_->value.end()}; }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
void check_finite(std::span<const T> v, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at index " +
                         std::to_string(i));
    }
  }
}

// Builds an op output. The backward closure receives the output node; inputs
// are reachable through `out.inputs` in the order given here.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  check_finite<T>(value, op);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->inputs.reserve(inputs.size());
      for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  check_finite<T>(value, op);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(n));
}

// Gradient sink for input i of an op, or nullptr when that input does not
// require a gradient.
template <typename T>
T* grad_sink(Node<T>& out, std::size_t i) {
  auto& in = *out.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& t) {
  return Tensor<T>::from_buffer(t.shape(), Buffer<T>(t.data().begin(), t.data().end()));
}

// Reverse-mode sweep from a scalar root. Gradients accumulate into leaves.
template <typename T>
void backward(const Tensor<T>& root) {
  if (root.numel() != 1) {
    throw ContractError("backward() requires a scalar root, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node().grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    // Interior gradients are no longer needed once propagated.
    if (n != &root.node() && n->backward) Buffer<T>().swap(n->grad);
  }
}

}  // namespace vbev
