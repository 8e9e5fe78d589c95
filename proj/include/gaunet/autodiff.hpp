#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "gaunet/tensor.hpp"

namespace gau::ad {

// Reverse-mode autodiff over a dynamically built DAG.
//
// The backward rule of every op emits new graph nodes instead of raw tensors,
// so gradients are themselves differentiable. The WGAN gradient penalty needs
// this: it differentiates the norm of the critic's input gradient a second
// time with respect to the critic weights.

template <typename S>
class Var;

template <typename S>
struct Node {
  Tensor<S> value;
  std::vector<Var<S>> parents;
  // Maps the upstream gradient to per-parent gradients (undefined Var = no
  // gradient for that slot). Must not capture the node's own output Var.
  std::function<std::vector<Var<S>>(const Var<S>&)> vjp;
  bool requires_grad = false;
  std::uint64_t id = 0;
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <typename S>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<S> value, bool requires_grad = false) {
    Var v;
    v.node_ = std::make_shared<Node<S>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    v.node_->id = next_node_id();
    return v;
  }

  static Var op(Tensor<S> value, std::vector<Var> parents,
                std::function<std::vector<Var>(const Var&)> vjp) {
    Var v;
    v.node_ = std::make_shared<Node<S>>();
    v.node_->value = std::move(value);
    bool rg = false;
    for (const Var& p : parents) rg = rg || (p.defined() && p.requires_grad());
    v.node_->parents = std::move(parents);
    v.node_->requires_grad = rg;
    if (rg) v.node_->vjp = std::move(vjp);
    v.node_->id = next_node_id();
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<S>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_->requires_grad; }
  Node<S>* node() const { return node_.get(); }

  // Same value, cut off from the graph.
  Var detach() const { return leaf(node_->value, false); }

 private:
  std::shared_ptr<Node<S>> node_;
};

template <typename S>
Var<S> constant(Tensor<S> t) {
  return Var<S>::leaf(std::move(t), false);
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b);  // defined in ops.hpp

// Gradients of `out` (any shape; seeded with ones) with respect to `wrt`.
// The returned Vars stay connected to the graph, so they can be differentiated
// again. Vars in `wrt` that `out` does not depend on get zero gradients.
template <typename S>
std::vector<Var<S>> grad(const Var<S>& out, const std::vector<Var<S>>& wrt) {
  // Collect the subgraph that requires grad, reachable from `out`.
  std::vector<Node<S>*> order;
  std::unordered_map<Node<S>*, Var<S>> holder;  // keeps nodes alive + var handles
  {
    std::vector<Var<S>> stack{out};
    while (!stack.empty()) {
      Var<S> v = stack.back();
      stack.pop_back();
      if (!v.defined() || !v.requires_grad()) continue;
      if (holder.count(v.node())) continue;
      holder.emplace(v.node(), v);
      order.push_back(v.node());
      for (const Var<S>& p : v.node()->parents) stack.push_back(p);
    }
  }
  // Parents are created before children, so descending id = reverse topo order.
  std::sort(order.begin(), order.end(),
            [](Node<S>* a, Node<S>* b) { return a->id > b->id; });

  std::unordered_map<Node<S>*, Var<S>> gmap;
  if (out.defined() && out.requires_grad())
    gmap[out.node()] = constant(Tensor<S>::full(out.shape(), S(1)));

  for (Node<S>* n : order) {
    auto it = gmap.find(n);
    if (it == gmap.end()) continue;  // unreachable from the seed
    if (!n->vjp) continue;           // leaf
    std::vector<Var<S>> pg = n->vjp(it->second);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      const Var<S>& p = n->parents[i];
      if (!p.defined() || !p.requires_grad()) continue;
      if (i >= pg.size() || !pg[i].defined()) continue;
      auto g = gmap.find(p.node());
      if (g == gmap.end())
        gmap[p.node()] = pg[i];
      else
        g->second = add(g->second, pg[i]);
    }
  }

  std::vector<Var<S>> result;
  result.reserve(wrt.size());
  for (const Var<S>& w : wrt) {
    auto g = w.defined() ? gmap.find(w.node()) : gmap.end();
    if (g != gmap.end())
      result.push_back(g->second);
    else
      result.push_back(constant(Tensor<S>::zeros(w.shape())));
  }
  return result;
}

}  // namespace gau::ad
