// Reverse-mode autodiff on a dynamically built tape. Each op allocates a
// Node holding its value, its parents, and a closure that scatters the
// incoming gradient to those parents. backward() walks the tape in reverse
// topological order from a scalar loss. Gradients live in a GradMap keyed by
// node address, not inside the nodes, so one set of weights can serve many
// tapes (and frozen encoders never accumulate anything).
#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hcd/common.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct GradMap {
  std::unordered_map<const Node*, Tensor> grads;

  Tensor* find(const Node* n) {
    auto it = grads.find(n);
    return it == grads.end() ? nullptr : &it->second;
  }
  const Tensor* find(const Node* n) const {
    auto it = grads.find(n);
    return it == grads.end() ? nullptr : &it->second;
  }
};

struct Node {
  Tensor value;
  std::vector<NodePtr> parents;
  // Scatters this node's gradient into the parents' GradMap slots.
  std::function<void(const Tensor& grad, GradMap& gm)> backward;
  bool requires_grad = false;
};

// Thread-local switch: under NoGradGuard ops record no parents and no
// closures, so inference builds no tape at all.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct Var {
  NodePtr n;

  Var() = default;
  explicit Var(NodePtr p) : n(std::move(p)) {}

  bool defined() const { return static_cast<bool>(n); }
  const Tensor& val() const { return n->value; }
  bool requires_grad() const { return n && n->requires_grad; }
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = false;
  return Var(std::move(n));
}

inline Var leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline bool any_requires_grad(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p.requires_grad()) return true;
  return false;
}

}  // namespace detail

// Builds an op node. When gradients are off (or no parent needs them) the
// closure and parent links are dropped and the node degenerates to a constant.
inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(const Tensor&, GradMap&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_mode() && detail::any_requires_grad(parents)) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.n);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

// Gradient slot for a node, created zero-filled on first touch.
inline Tensor& grad_slot(GradMap& gm, const Node* n) {
  auto it = gm.grads.find(n);
  if (it == gm.grads.end())
    it = gm.grads.emplace(n, Tensor(n->value.shape)).first;
  return it->second;
}

inline double scalar_value(const Var& v) {
  require(v.defined() && v.val().numel() == 1, "expected a scalar variable");
  return v.val().data[0];
}

// Reverse-mode sweep from a scalar loss. Returns gradients for every node
// that required them; leaves are looked up by their Node address.
inline GradMap backward(const Var& loss) {
  require(loss.defined() && loss.val().numel() == 1, "backward: loss must be a scalar");
  GradMap gm;
  if (!loss.requires_grad()) return gm;

  // Iterative post-order topological sort over the requires_grad subgraph.
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<const Node*, size_t>> stack;
  stack.emplace_back(loss.n.get(), 0);
  visited.insert(loss.n.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      const Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grad_slot(gm, loss.n.get()).data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    if (!node->backward) continue;
    const Tensor* g = gm.find(node);
    if (!g) continue;
    node->backward(*g, gm);
  }
  return gm;
}

}  // namespace hcd
