#pragma once

// Dense n-dimensional array with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle. Operations that see at least one input
// with requires_grad() record a backward closure on their output; backward()
// collects the reachable graph into a ComputationTape (topological order) and
// replays the adjoints in reverse.

#include <cassert>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "headfield/errors.hpp"

namespace headfield {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

template <class T>
class Tensor;

namespace detail {

template <class T>
struct TensorImpl;

template <class T>
struct GradNode {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Receives the output whose grad is populated; accumulates into inputs.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty means absent
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> grad_fn;

  bool is_leaf() const { return grad_fn == nullptr; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <class T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = checked_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = checked_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    const auto n = checked_numel(shape);
    if (static_cast<std::int64_t>(values.size()) != n) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_string(shape));
    }
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const T> data() const { return impl_->data; }
  /// Direct write access. Reserved for parameter updates and initialisation;
  /// mutating a tensor that is part of a live graph invalidates its adjoints.
  std::span<T> mutable_data() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T item() const {
    if (impl_->data.size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_string(impl_->shape));
    }
    return impl_->data[0];
  }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!impl_->is_leaf() && !on) {
      throw ParameterError("cannot clear requires_grad on a non-leaf tensor");
    }
    impl_->requires_grad = on;
  }
  bool is_leaf() const { return impl_->is_leaf(); }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.clear(); }

  /// Returns a leaf holding a copy of the values, detached from any graph.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data, false); }
  Tensor clone_leaf(bool requires_grad) const { return Tensor(impl_->shape, impl_->data, requires_grad); }

  /// Seeds d(this)/d(this) = 1; requires a single-element tensor.
  void backward() const;

  /// Identity of the underlying storage, used for sharing checks.
  const void* storage_id() const { return impl_.get(); }

  std::shared_ptr<Impl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

 private:
  Tensor(Shape shape, std::vector<T> values, bool requires_grad) : impl_(std::make_shared<Impl>()) {
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static std::int64_t checked_numel(const Shape& shape) {
    for (auto e : shape) {
      if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_string(shape));
    }
    return shape_numel(shape);
  }

  std::shared_ptr<Impl> impl_;
};

/// Topologically ordered record of the operations reachable from a root.
/// Every node appears after all of its inputs.
template <class T>
class ComputationTape {
 public:
  using Impl = detail::TensorImpl<T>;

  static ComputationTape build(const Tensor<T>& root) {
    ComputationTape tape;
    std::unordered_set<const Impl*> visited;
    // Iterative post-order DFS.
    std::vector<std::pair<Impl*, std::size_t>> stack;
    auto root_impl = root.impl();
    stack.emplace_back(root_impl.get(), 0);
    visited.insert(root_impl.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      const auto* fn = node->grad_fn.get();
      if (fn && next < fn->inputs.size()) {
        Impl* child = fn->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        continue;
      }
      tape.order_.push_back(node);
      stack.pop_back();
    }
    return tape;
  }

  std::span<Impl* const> order() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds the last node (the root) with 1 and replays adjoints in reverse.
  void replay() const {
    if (order_.empty()) return;
    for (Impl* node : order_) {
      if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
    }
    Impl* root = order_.back();
    auto& seed = root->ensure_grad();
    for (auto& g : seed) g += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Impl* node = *it;
      if (node->grad_fn) node->grad_fn->backward(*node);
    }
  }

 private:
  std::vector<Impl*> order_;
};

template <class T>
void Tensor<T>::backward() const {
  if (impl_->data.size() != 1) {
    throw DimensionError("backward() requires a single-element tensor, got " + shape_string(impl_->shape));
  }
  if (!impl_->requires_grad) return;
  ComputationTape<T>::build(*this).replay();
}

namespace detail {

/// Builds an op output and, when any input participates in differentiation,
/// attaches `backward`. `backward(out)` reads out.grad and accumulates into
/// inputs through input_grad().
template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                      Backward&& backward) {
  auto out = std::make_shared<TensorImpl<T>>();
  out->shape = std::move(shape);
  out->data = std::move(values);
  bool needs = false;
  if (grad_mode_flag()) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    out->requires_grad = true;
    auto node = std::make_shared<GradNode<T>>();
    for (const auto* in : inputs) node->inputs.push_back(in->impl());
    node->backward = std::forward<Backward>(backward);
    out->grad_fn = std::move(node);
  }
  return Tensor<T>(std::move(out));
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                      std::function<void(const TensorImpl<T>&)> backward) {
  auto out = std::make_shared<TensorImpl<T>>();
  out->shape = std::move(shape);
  out->data = std::move(values);
  bool needs = false;
  if (grad_mode_flag()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    out->requires_grad = true;
    auto node = std::make_shared<GradNode<T>>();
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    out->grad_fn = std::move(node);
  }
  return Tensor<T>(std::move(out));
}

/// Grad buffer of an input if it takes part in differentiation, else null.
template <class T>
std::vector<T>* input_grad(const std::shared_ptr<TensorImpl<T>>& in) {
  if (!in->requires_grad) return nullptr;
  return &in->ensure_grad();
}

}  // namespace detail

}  // namespace headfield
