#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lcaunet/tensor.hpp"

namespace lcaunet::ag {

// Reverse-mode autodiff on dense arrays. Ops build a DAG of Nodes; backward()
// runs the recorded closures in reverse topological order. Everything is
// sequential, so gradients are bit-reproducible across runs.

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool saved;
  NoGradGuard() : saved(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = saved; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct Node {
  Array<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;

  void ensure_grad() {
    if (grad.size() != value.data.size()) grad.assign(value.data.size(), T(0));
  }
  void zero_grad() { grad.assign(grad.size(), T(0)); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Array<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var param(Array<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  const Shape& shape() const { return node_->value.shape; }
  std::int64_t dim(int i) const { return node_->value.dim(i); }
  std::int64_t size() const { return node_->value.size(); }
  Array<T>& value() const { return node_->value; }
  std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }

  // Scalar convenience for rank-0/1 single-element results.
  T item() const {
    LCAUNET_CHECK_SHAPE(size() == 1, "item() on non-scalar ", shape_str(shape()));
    return node_->value.data[0];
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Central op constructor: records the graph edge only when grad tracking is
// on and some input needs it. `backward` reads self.grad and accumulates into
// parent grads (checking parent.requires_grad).
template <typename T>
Var<T> make_op(Array<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_mode_flag()) {
    bool track = false;
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) track = true;
    if (track) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents)
        if (p.defined()) n->parents.push_back(p.ptr());
      n->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(n));
}

template <typename T>
void accumulate(Node<T>& parent, const T* g, std::int64_t n) {
  parent.ensure_grad();
  T* dst = parent.grad.data();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

// Backpropagate from a scalar root. Seeds d(root)/d(root) = 1.
template <typename T>
void backward(const Var<T>& root) {
  LCAUNET_CHECK_SHAPE(root.size() == 1, "backward() needs a scalar root, got ",
                      shape_str(root.shape()));
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node().ensure_grad();
  root.node().grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward) continue;
    n->ensure_grad();  // unreached-by-gradient safety; normally already set
    n->backward(*n);
  }
}

}  // namespace lcaunet::ag
