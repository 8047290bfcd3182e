#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rtsmono/tensor.hpp"

namespace rtsmono {

namespace detail {
bool& grad_mode_flag();
}  // namespace detail

/// True while operations record their backward closures.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  Tensor<T>& grad_buffer() {
    if (grad.empty() && value.size() > 0) grad = Tensor<T>(value.shape());
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }

  void accumulate(const Tensor<T>& g) {
    auto& buf = grad_buffer();
    T* dst = buf.ptr();
    const T* src = g.ptr();
    const std::int64_t n = buf.size();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }
};

/// Handle to a value in the reverse-mode graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int axis) const { return node_->value.dim(axis); }
  int rank() const { return node_->value.rank(); }
  std::int64_t size() const { return node_->value.size(); }
  T item() const { return node_->value.item(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  const char* op() const { return node_->op; }

  /// Gradient buffer; zeros when nothing reached this value.
  Tensor<T> grad() const {
    if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
    return node_->grad;
  }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Var detach() const { return Var(node_->value, false); }

  /// Reverse-mode pass from this scalar root.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds a result node; records parents and closure only when some parent needs a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, const char* op,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " +
                     shape_string(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; parent order is fixed, so the topological order is too.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad = Tensor<T>();
  }
  node_->grad_buffer().fill(T(0));
  node_->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
    if (n != node_.get()) n->grad = Tensor<T>();
  }
}

}  // namespace rtsmono
