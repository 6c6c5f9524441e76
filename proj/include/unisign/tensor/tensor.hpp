// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "unisign/core/error.hpp"

namespace unisign {

using Index = std::int64_t;
using Shape = std::vector<Index>;

namespace detail {

// Vectorized kernels peel a different number of leading elements depending on
// where a buffer starts, which changes float summation order. Aligning every
// buffer to 64 bytes makes results independent of heap placement, so two
// identical runs agree bit for bit.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

}  // namespace detail

/// Contiguous 64-byte aligned storage used for tensor values and gradients.
template <class S>
using Buffer = std::vector<S, detail::AlignedAllocator<S>>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
inline thread_local bool grad_recording = true;
}

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_recording; }

template <class S>
struct Node {
  Shape shape;
  Buffer<S> value;
  Buffer<S> grad;  // lazily allocated
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  S* grad_data() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad.data();
  }
};

/// Dense row-major array with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage. Parameters are
/// leaves created with `requires_grad`; every op records a backward closure
/// when any input requires a gradient and recording is enabled.
template <class S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  static Tensor from(const std::vector<S>& values, Shape shape, bool requires_grad = false) {
    return from(Buffer<S>(values.begin(), values.end()), std::move(shape), requires_grad);
  }
  static Tensor from(std::initializer_list<S> values, Shape shape, bool requires_grad = false) {
    return from(Buffer<S>(values), std::move(shape), requires_grad);
  }
  static Tensor from(Buffer<S> values, Shape shape, bool requires_grad = false) {
    if (static_cast<Index>(values.size()) != numel(shape))
      detail::throw_shape("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                          to_string(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    const auto count = static_cast<std::size_t>(numel(shape));
    return from(Buffer<S>(count, v), std::move(shape), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), S(0), requires_grad);
  }
  static Tensor scalar(S v) { return from({v}, {}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) detail::throw_shape("axis out of range for shape " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
  }
  Index size() const { return static_cast<Index>(node_->value.size()); }

  std::span<const S> data() const { return node_->value; }
  /// In-place access; bypasses the graph (used by optimizers and initializers).
  std::span<S> mutable_data() { return node_->value; }
  std::span<const S> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  Buffer<S>& grad_storage() { return node_->grad; }

  S item() const {
    if (size() != 1) detail::throw_shape("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  S at(std::initializer_list<Index> idx) const {
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) flat = flat * node_->shape[k++] + i;
    return node_->value[static_cast<std::size_t>(flat)];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values without history.
  Tensor detach() const { return from(node_->value, node_->shape); }

  Node<S>* node() const { return node_.get(); }
  const std::shared_ptr<Node<S>>& ptr() const { return node_; }

  /// Backpropagates from this scalar. Leaf gradients accumulate across calls;
  /// interior gradients are released afterwards.
  void backward() const {
    if (size() != 1) detail::throw_shape("backward() requires a scalar, got " + to_string(shape()));
    if (!node_->requires_grad) return;
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<S>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_data()[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<S>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    for (Node<S>* n : order)
      if (!n->leaf) n->grad.clear();
  }

 private:
  std::shared_ptr<Node<S>> node_;
};

namespace detail {

/// Creates an op result; the backward closure is attached only when a parent
/// requires a gradient and recording is enabled.
template <class S>
Tensor<S> make_result(Shape shape, Buffer<S> value, std::vector<Tensor<S>> parents,
                      std::function<void(Node<S>&)> backward) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  bool needs = false;
  if (unisign::grad_enabled())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Tensor<S>(std::move(n));
}

/// Parent `i` of `out` when it takes a gradient, otherwise null.
template <class S>
Node<S>* grad_parent(Node<S>& out, std::size_t i) {
  Node<S>* p = out.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

}  // namespace detail
}  // namespace unisign
