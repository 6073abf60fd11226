#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fadapt/error.hpp"

namespace fadapt {

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

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

/// When set, piecewise ops (relu, clamp) fold their branch pattern into this
/// hash, so callers can tell whether two evaluations took the same pieces.
inline std::uint64_t*& branch_trace() {
  thread_local std::uint64_t* h = nullptr;
  return h;
}

inline void trace_branch(std::uint64_t piece) {
  if (std::uint64_t* h = branch_trace()) *h = (*h ^ piece) * 0x100000001b3ULL;
}

}  // namespace detail

/// Records the branch pattern of piecewise ops for its lifetime.
class BranchTrace {
 public:
  BranchTrace() : prev_(detail::branch_trace()) { detail::branch_trace() = &hash_; }
  ~BranchTrace() { detail::branch_trace() = prev_; }
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;
  std::uint64_t hash() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  std::uint64_t* prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major tensor with reverse-mode autodiff. Copies share storage
/// (handle semantics); use clone() for an independent value.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
      throw DimensionError("tensor shape must be positive: " + shape_str(shape));
    node_->data.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (numel_of(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
      throw DimensionError("tensor shape must be positive: " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    set_requires_grad(requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{1}, std::vector<T>{v}, requires_grad); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& vec() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), T(0));
    if (!on) node_->grad.clear();
  }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  /// Independent copy, off the tape.
  Tensor clone() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
  }
  /// Same storage, no graph history and no gradient.
  Tensor detach() const { return clone(); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> d(node_->data.begin(), node_->data.end());
    return Tensor<U>(node_->shape, std::move(d));
  }

  bool same_storage(const Tensor& o) const { return node_ == o.node_; }
  const NodePtr& node() const { return node_; }

  /// Builds an op result. Graph edges are kept only when recording is on and
  /// some parent participates in differentiation.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                            std::function<void(detail::Node<T>&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    bool needs = grad_enabled() &&
                 std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (needs) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  NodePtr node_;
};

/// Accumulates d(loss)/d(x) into every requires_grad tensor reachable from
/// `loss`. Leaf gradients accumulate across calls; zero them between steps.
template <class T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward() on a tensor that is not on the tape");
  using N = detail::Node<T>;
  std::vector<N*> order;
  std::unordered_set<N*> seen;
  std::vector<std::pair<N*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      N* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (N* n : order)
    if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), T(0));
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    N* n = *it;
    if (n->backward) {
      n->backward(*n);
      n->grad.clear();  // interior buffers are not needed past this point
    }
  }
}

template <class T>
void zero_grads(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace fadapt
