// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rwsa/common.hpp"
#include "rwsa/tensor.hpp"

namespace rwsa {

// When false, ops produce plain values with no parents/backward closures.
// Used for inference and for re-running checkpointed segments.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  bool prev;
};

// Global toggle for the per-op finite checks. On by default; every op output
// is scanned and a NaN/Inf raises with the producing op's tag.
inline bool& finite_checks() {
  static bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // undefined until backward touches this node
  const char* op = "leaf";
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Accumulates into the parents' grads. May be empty for leaves.
  std::function<void(Node<T>&)> backward;

  const Tensor<T>& ensure_grad() {
    if (!grad.defined()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
  void zero_grad() { grad = Tensor<T>(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false,
                 const char* tag = "leaf") {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && grad_mode();
  n->op = tag;
  return n;
}

template <class T>
Var<T> constant(Tensor<T> value, const char* tag = "const") {
  return make_leaf<T>(std::move(value), false, tag);
}

// Shared factory used by every op: wires parents and the closure only when
// grad mode is on and at least one parent needs gradients.
template <class T>
Var<T> make_op_node(const char* tag, Tensor<T> value,
                    std::vector<Var<T>> parents,
                    std::function<void(Node<T>&)> backward) {
  if (finite_checks() && !value.all_finite())
    fail(ErrorKind::Internal,
         std::string("non-finite values produced by op '") + tag + "'");
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = tag;
  if (grad_mode()) {
    bool need = false;
    for (auto& p : parents)
      if (p && p->requires_grad) need = true;
    if (need) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = std::move(backward);
    }
  }
  return n;
}

namespace detail {

template <class T>
void topo_sort(const Var<T>& root, std::vector<Node<T>*>& order) {
  // Iterative DFS, post-order. Only nodes that require grad are visited.
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (!root->requires_grad) return;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Gradients accumulate into node->grad,
// so fan-out (a subgraph consumed twice) adds both contributions.
template <class T>
void backward(const Var<T>& root) {
  check(root->value.size() == 1, "backward root must be scalar, got " +
                                     shape_str(root->value.shape()));
  if (!root->requires_grad) return;
  std::vector<Node<T>*> order;
  detail::topo_sort(root, order);
  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward) continue;
    if (finite_checks() && n->grad.defined() && !n->grad.all_finite())
      fail(ErrorKind::Internal,
           std::string("non-finite gradient at op '") + n->op + "'");
    n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Parameter registry with first-class weight tying.
// ---------------------------------------------------------------------------

template <class T>
struct Parameter {
  std::string name;  // canonical path, unique per model
  Var<T> node;
  bool trainable = true;
};

template <class T>
struct SharedHandle {
  const Parameter<T>* canonical = nullptr;
  std::vector<std::string> aliases;
};

template <class T>
class ParamStore {
 public:
  Var<T> create(const std::string& name, Tensor<T> init, bool trainable = true) {
    check(!params_.count(name) && !ties_.count(name),
          "duplicate parameter name: " + name);
    Parameter<T> p;
    p.name = name;
    p.node = make_leaf<T>(std::move(init), trainable, "param");
    // Parameters must survive NoGradGuard model builds.
    p.node->requires_grad = trainable;
    p.trainable = trainable;
    order_.push_back(name);
    params_.emplace(name, std::move(p));
    return params_.at(name).node;
  }

  // Registers `alias` as a second site of `canonical`. Reads and writes at
  // either site observe the same storage, and gradients accumulate into the
  // one grad buffer.
  SharedHandle<T> tie(const std::string& canonical, const std::string& alias) {
    check(params_.count(canonical), "tie: unknown canonical parameter " + canonical);
    check(!params_.count(alias) && !ties_.count(alias),
          "tie: alias name already in use: " + alias);
    ties_[alias] = canonical;
    SharedHandle<T> h;
    h.canonical = &params_.at(canonical);
    h.aliases = aliases_of(canonical);
    return h;
  }

  bool has(const std::string& name) const {
    return params_.count(name) || ties_.count(name);
  }

  const std::string& resolve(const std::string& name) const {
    auto t = ties_.find(name);
    if (t != ties_.end()) return t->second;
    check(params_.count(name), "unknown parameter: " + name);
    return params_.find(name)->first;
  }

  Var<T> at(const std::string& name) const {
    return params_.at(resolve(name)).node;
  }

  bool is_alias(const std::string& name) const { return ties_.count(name) > 0; }

  std::vector<std::string> aliases_of(const std::string& canonical) const {
    std::vector<std::string> out;
    for (const auto& [alias, canon] : ties_)
      if (canon == canonical) out.push_back(alias);
    return out;
  }

  // Canonical parameters in creation order.
  const std::vector<std::string>& names() const { return order_; }
  const std::map<std::string, std::string>& tie_table() const { return ties_; }

  Parameter<T>& param(const std::string& name) {
    return params_.at(resolve(name));
  }
  const Parameter<T>& param(const std::string& name) const {
    return params_.at(resolve(name));
  }

  std::size_t count_unique_scalars() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += params_.at(name).node->value.size();
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) params_.at(name).node->zero_grad();
  }

  // Gradient map keyed by canonical name; only trainable entries appear.
  std::map<std::string, Tensor<T>> grad_map() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& name : order_) {
      const auto& p = params_.at(name);
      if (p.trainable && p.node->grad.defined()) out[name] = p.node->grad;
    }
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Parameter<T>> params_;
  std::map<std::string, std::string> ties_;  // alias -> canonical
};

// forward_backward: run reverse mode from a scalar and return the gradient
// map. Shared parameters receive the sum over all alias sites because every
// site resolves to the same node.
template <class T>
std::map<std::string, Tensor<T>> forward_backward(const Var<T>& root,
                                                  ParamStore<T>& store) {
  store.zero_grads();
  backward(root);
  return store.grad_map();
}

// ---------------------------------------------------------------------------
// Gradient checkpointing: forward runs without a tape; backward re-runs the
// segment with the tape on and backpropagates through the rebuilt subgraph.
// Parameters used inside `fn` get their gradients accumulated as usual since
// the rebuilt subgraph connects to the same parameter nodes.
// ---------------------------------------------------------------------------

template <class T>
Var<T> checkpoint(const std::function<Var<T>(Var<T>)>& fn, const Var<T>& x) {
  if (!grad_mode()) return fn(x);
  Tensor<T> y_val;
  {
    NoGradGuard ng;
    Var<T> xd = make_leaf<T>(x->value, false, "ckpt_in");
    y_val = fn(xd)->value;
  }
  auto fn_copy = fn;
  auto bw = [fn_copy](Node<T>& out) {
    Var<T> x_leaf = make_leaf<T>(out.parents[0]->value, true, "ckpt_in");
    Var<T> y2 = fn_copy(x_leaf);
    check(y2->requires_grad, "checkpointed segment lost gradient flow");
    // Seed the rebuilt segment with the incoming gradient and sweep it.
    std::vector<Node<T>*> order;
    detail::topo_sort(y2, order);
    y2->ensure_grad();
    y2->grad.array() = out.grad.array();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward) n->backward(*n);
    }
    if (x_leaf->grad.defined() && out.parents[0]->requires_grad) {
      out.parents[0]->ensure_grad();
      out.parents[0]->grad.array() += x_leaf->grad.array();
    }
  };
  return make_op_node<T>("checkpoint", std::move(y_val), {x}, std::move(bw));
}

}  // namespace rwsa
