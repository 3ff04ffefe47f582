#pragma once

// Dense row-major tensors and the reverse-mode differentiation machinery.
//
// A Var is a handle on a graph node holding a value tensor, an accumulated
// gradient and a closure that pushes the node's gradient to its parents.
// Nodes are only linked into the graph when at least one input requires a
// gradient and recording is enabled, so inference under NoGradGuard builds
// no graph at all.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cofill/error.hpp"

namespace cofill {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " +
                           shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var leaf(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated so far; zeros if none has been accumulated.
  Tensor grad() const {
    if (node_->grad.size() != node_->value.size())
      return Tensor(node_->value.shape());
    return node_->grad;
  }
  void zero_grad() { node_->grad = Tensor(); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Builds a result node; links parents only when a gradient can flow.
  static Var make_result(Tensor value, std::vector<Var> inputs,
                         std::function<void(detail::Node&)> backward_fn) {
    Var out(std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& v : inputs) out.node_->parents.push_back(v.node_);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the primitive applications reachable from a root,
/// in an order where every node precedes the nodes that consumed it.
class GradTape {
 public:
  explicit GradTape(const Var& root) {
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::span<detail::Node* const> order() const { return order_; }

  /// Replays the tape in reverse, seeding the root with `seed`.
  void backward(const Tensor& seed) const {
    detail::Node* root = order_.back();
    Tensor& g = root->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      detail::Node* n = *it;
      if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
    }
    // Interior gradients are released; leaves keep theirs.
    for (detail::Node* n : order_)
      if (n->backward_fn) n->grad = Tensor();
  }

 private:
  std::vector<detail::Node*> order_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
inline void backward(const Var& loss) {
  if (loss.value().size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  GradTape tape(loss);
  tape.backward(Tensor::scalar(1.0));
}

}  // namespace cofill
