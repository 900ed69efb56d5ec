#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "effnas/core/error.hpp"
#include "effnas/core/shape.hpp"

namespace effnas {

template <class T>
class BasicTensor;

namespace detail {

template <class T>
struct Node;

template <class T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::shared_ptr<Node<T>> producer;  // null for leaves
};

/// One recorded primitive: the inputs it read and the rule that pushes the
/// output gradient back into them.
template <class T>
struct Node {
  std::string op;
  std::vector<BasicTensor<T>> inputs;
  std::function<void(std::span<const T>)> backward;
  bool released = false;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool& finite_check_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// True while operations record themselves for reverse-mode differentiation.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables recording for the lifetime of the guard (inference, benchmarking).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Toggles the post-op NaN/Inf scan. On by default.
inline void set_finite_checks(bool enabled) { detail::finite_check_flag() = enabled; }
inline bool finite_checks() { return detail::finite_check_flag(); }

/// Dense row-major tensor with optional gradient. Copies share storage; a
/// tensor is a handle.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::Storage<T>>()) {
    check_shape(shape);
    if (effnas::numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(effnas::numel(shape)) +
                       " values, got " + std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = static_cast<std::size_t>(effnas::numel(shape));
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static BasicTensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
  }
  template <class Rng>
  static BasicTensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    std::vector<T> values(static_cast<std::size_t>(effnas::numel(shape)));
    for (auto& v : values) v = static_cast<T>(dist(rng));
    return BasicTensor(std::move(shape), std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::int64_t dim(std::int64_t axis) const { return impl().shape[normalize_axis(axis, rank())]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl().data.size()); }

  std::span<const T> data() const { return impl().data; }
  /// Direct write access. Reserved for initialization and optimizer steps on leaves.
  std::span<T> mutable_data() { return impl().data; }
  std::vector<T> to_vector() const { return impl().data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
    return impl().data[0];
  }
  T operator[](std::int64_t i) const { return impl().data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool on) {
    if (impl().producer && !on) throw AutogradError("cannot detach a non-leaf tensor in place");
    impl().requires_grad = on;
  }
  bool is_leaf() const { return !impl().producer; }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const T> grad() const { return impl().grad; }
  BasicTensor grad_tensor() const {
    if (!has_grad()) return zeros(shape());
    return BasicTensor(shape(), impl().grad);
  }
  void zero_grad() { impl().grad.clear(); }

  /// Gradient buffer, allocated zero-filled on first use.
  std::span<T> grad_buffer() {
    auto& s = impl();
    if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
    return s.grad;
  }

  /// Detached deep copy.
  BasicTensor clone(bool requires_grad = false) const {
    return BasicTensor(shape(), impl().data, requires_grad);
  }
  BasicTensor detach() const { return BasicTensor(shape(), impl().data, false); }

  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

  detail::Storage<T>& impl() const {
    if (!impl_) throw Error("use of an undefined tensor");
    return *impl_;
  }

 private:
  std::shared_ptr<detail::Storage<T>> impl_;
};

using Tensor = BasicTensor<float>;

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

namespace detail {

template <class T>
void check_finite(const BasicTensor<T>& out, std::string_view op) {
  if (finite_checks() && !all_finite(out.data())) {
    throw NonFiniteError(std::string(op) + " produced a non-finite value");
  }
}

/// Attaches a backward rule to `out` when any input participates in autograd.
template <class T, class Backward>
BasicTensor<T> record(std::string_view op, BasicTensor<T> out, std::vector<BasicTensor<T>> inputs,
                      Backward&& backward) {
  check_finite(out, op);
  if (!grad_enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const BasicTensor<T>& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = std::string(op);
  node->inputs = std::move(inputs);
  node->backward = std::forward<Backward>(backward);
  out.impl().requires_grad = true;
  out.impl().producer = std::move(node);
  return out;
}

/// Adds `values` into the gradient of `t` when it takes part in autograd.
template <class T>
void accumulate(BasicTensor<T> t, std::span<const T> values) {
  if (!t.defined() || !t.requires_grad()) return;
  auto g = t.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

}  // namespace detail

/// The ordered record of primitives reachable from a loss, inputs before the
/// ops that consume them. Replaying it back to front visits each op once.
template <class T>
class Tape {
 public:
  struct Entry {
    detail::Storage<T>* output;
    detail::Node<T>* node;
  };

  static Tape collect(const BasicTensor<T>& root) {
    Tape tape;
    std::unordered_set<const detail::Storage<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<detail::Storage<T>*, std::size_t>> stack;
    auto* r = &root.impl();
    if (!r->producer) return tape;
    stack.emplace_back(r, 0);
    seen.insert(r);
    while (!stack.empty()) {
      auto& [storage, next] = stack.back();
      auto& inputs = storage->producer->inputs;
      if (next < inputs.size()) {
        auto& in = inputs[next++];
        if (!in.defined()) continue;
        auto* s = &in.impl();
        if (s->producer && seen.insert(s).second) stack.emplace_back(s, 0);
      } else {
        tape.entries_.push_back({storage, storage->producer.get()});
        stack.pop_back();
      }
    }
    return tape;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

/// Populates gradients of every requires_grad tensor that the scalar `loss`
/// depends on. Leaf gradients accumulate across calls until zero_grad();
/// intermediate buffers are released and the recorded graph is consumed, so
/// a second backward through the same graph is an error.
template <class T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) throw AutogradError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad() || loss.is_leaf()) {
    throw AutogradError("backward on a tensor with no recorded operations");
  }
  auto tape = Tape<T>::collect(loss);
  for (const auto& e : tape.entries()) {
    if (e.node->released) throw AutogradError("backward through a graph that was already consumed; run forward again");
  }
  auto& root = loss.impl();
  root.grad.assign(1, T(1));
  const auto& entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    auto* out = it->output;
    auto* node = it->node;
    if (!out->grad.empty()) node->backward(std::span<const T>(out->grad));
    node->released = true;
    node->backward = nullptr;
    out->grad.clear();
    out->grad.shrink_to_fit();
  }
}

}  // namespace effnas
