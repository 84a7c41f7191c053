// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "wid/common.hpp"

// Debug-mode finiteness checks on op outputs. Off in NDEBUG builds unless
// forced with -DWID_CHECK_FINITE=1.
#ifndef WID_CHECK_FINITE
#ifdef NDEBUG
#define WID_CHECK_FINITE 0
#else
#define WID_CHECK_FINITE 1
#endif
#endif

namespace wid {

// Records whether ops build the backward graph. Disable for inference.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }

 private:
  bool prev_;
};

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // leaves: persistent, accumulated; interior: reset per backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;  // null for leaves

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

// Dense N-dimensional array with optional reverse-mode gradient tracking.
// Cheap to copy: a Tensor is a shared handle onto its storage + graph node.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    validate_shape(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<std::size_t>(shape_numel(impl->shape)), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw DimensionError("from_vector: " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return filled({1}, value, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.impl_->data) x = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::int64_t numel() const { return impl_->numel(); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw DimensionError("item(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  T* grad() { return impl_->grad.data(); }
  const T* grad() const { return impl_->grad.data(); }
  std::vector<T>& grad_vec() { return impl_->grad; }
  const std::vector<T>& grad_vec() const { return impl_->grad; }

  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), T(0));
  }

  // Detached copy of values (no graph, no grad).
  Tensor clone_values() const {
    auto impl = std::make_shared<Impl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

  // 4-d convenience accessors for tests and image code.
  T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const Shape& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }
  T at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const Shape& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }

  // Reverse-mode differentiation from a scalar. Interior gradients are reset
  // on every call; leaf gradients accumulate until zero_grad().
  void backward() {
    if (numel() != 1) throw DimensionError("backward: loss must be scalar, got " + shape_str(shape()));
    if (!impl_->requires_grad) return;  // nothing reachable tracks gradients
    std::vector<Impl*> order;
    topo_order(order);
    for (Impl* node : order) {
      if (node->is_leaf()) {
        node->ensure_grad();
      } else {
        node->grad.assign(node->data.size(), T(0));
      }
    }
    impl_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

 private:
  static void validate_shape(const Shape& s) {
    for (auto d : s)
      if (d <= 0) throw DimensionError("shape dims must be positive: " + shape_str(s));
  }

  void topo_order(std::vector<Impl*>& order) const {
    // Iterative post-order DFS over grad-requiring parents.
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    if (!impl_->requires_grad) return;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Impl* p = node->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Impl> impl_;
};

namespace detail {

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
#if WID_CHECK_FINITE
  for (const T& x : t.vec()) {
    if (!std::isfinite(static_cast<double>(x)))
      throw ValueError(std::string(op) + ": non-finite value in output");
  }
#else
  (void)t;
  (void)op;
#endif
}

// Builds the output node for an op: allocates data, wires parents and the
// backward closure when grad tracking applies.
template <typename T>
Tensor<T> make_op_output(Shape shape, std::vector<Tensor<T>> inputs,
                         std::function<void(TensorImpl<T>&)> backward_fn) {
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  bool track = GradMode::enabled();
  bool any_grad = false;
  for (const auto& in : inputs) any_grad = any_grad || in.requires_grad();
  if (track && any_grad) {
    out.set_requires_grad(true);
    auto impl = out.impl();
    impl->parents.reserve(inputs.size());
    for (const auto& in : inputs) impl->parents.push_back(in.impl());
    impl->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace detail

}  // namespace wid
