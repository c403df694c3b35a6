#pragma once

#include <cstring>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "dfrec/tensor.hpp"

namespace dfrec {

// Reverse-mode autodiff over a define-by-run tape.
//
// A Graph owns nodes for one forward pass (typically one sample). Nodes are
// created in topological order, so the backward sweep is a reverse walk over
// the creation sequence. Parameter leaves alias external storage owned by a
// ParamTensor; their gradients are harvested after backward() so several
// graphs can reuse the same parameters without copying them.

template <typename T>
struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  // AdamW state, owned here so checkpoints can serialize it next to values.
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  bool trainable = true;

  ParamTensor() = default;
  ParamTensor(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)),
        value(static_cast<std::size_t>(numel(shape)), T(0)),
        grad(value.size(), T(0)) {}

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class Graph;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> owned;        // empty when the node aliases external storage
  const T* vptr = nullptr;
  std::int64_t vlen = 0;
  std::vector<T> grad;         // allocated lazily on first accumulation
  bool requires_grad = false;
  std::function<void()> backward;  // captures parent Node pointers

  std::span<const T> val() const { return {vptr, static_cast<std::size_t>(vlen)}; }
  bool grad_live() const { return !grad.empty(); }
  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<std::size_t>(vlen), T(0));
    return {grad.data(), grad.size()};
  }
};

// Cheap handle to a node; ops are free functions over Values.
template <typename T>
class Value {
 public:
  Value() = default;
  Value(Graph<T>* g, Node<T>* n) : g_(g), n_(n) {}
  Graph<T>* graph() const { return g_; }
  Node<T>* node() const { return n_; }
  const Shape& shape() const { return n_->shape; }
  std::span<const T> val() const { return n_->val(); }
  std::int64_t size() const { return n_->vlen; }
  bool defined() const { return n_ != nullptr; }
  T scalar() const { return n_->val()[0]; }

 private:
  Graph<T>* g_ = nullptr;
  Node<T>* n_ = nullptr;
};

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Owned-value node; ops fill node->owned then call seal().
  Node<T>* make(Shape shape, bool requires_grad) {
    nodes_.emplace_back();
    Node<T>& n = nodes_.back();
    n.shape = std::move(shape);
    n.vlen = numel(n.shape);
    n.owned.resize(static_cast<std::size_t>(n.vlen));
    n.vptr = n.owned.data();
    n.requires_grad = requires_grad;
    return &n;
  }

  // View node over memory that outlives the graph.
  Node<T>* make_view(Shape shape, const T* data, bool requires_grad) {
    nodes_.emplace_back();
    Node<T>& n = nodes_.back();
    n.shape = std::move(shape);
    n.vlen = numel(n.shape);
    n.vptr = data;
    n.requires_grad = requires_grad;
    return &n;
  }

  Value<T> constant(const Tensor<T>& t) {
    Node<T>* n = make(t.shape, false);
    std::copy(t.data.begin(), t.data.end(), n->owned.begin());
    return {this, n};
  }

  Value<T> constant(Shape shape, std::span<const T> data) {
    Node<T>* n = make(std::move(shape), false);
    std::copy(data.begin(), data.end(), n->owned.begin());
    return {this, n};
  }

  Value<T> scalar_const(T v) { return constant(Shape{1}, std::span<const T>(&v, 1)); }

  // Leaf over a parameter tensor. Gradients accumulate into the node and are
  // pushed to the ParamTensor by harvest_param_grads().
  Value<T> param(ParamTensor<T>& p) {
    Node<T>* n = make_view(p.shape, p.value.data(), p.trainable);
    if (p.trainable) param_leaves_.emplace_back(n, &p);
    return {this, n};
  }

  // Differentiable input leaf (used by finite-difference probes on inputs).
  Value<T> input(const Tensor<T>& t, bool requires_grad = false) {
    Node<T>* n = make(t.shape, requires_grad);
    std::copy(t.data.begin(), t.data.end(), n->owned.begin());
    return {this, n};
  }

  // Reverse sweep from a scalar node. seed is the incoming gradient, letting
  // callers fold a 1/batch factor into the sweep.
  void backward(const Value<T>& loss, T seed = T(1)) {
    if (loss.size() != 1) throw InputError("backward expects a scalar loss");
    loss.node()->ensure_grad()[0] += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->backward && it->grad_live()) it->backward();
    }
  }

  // Adds node gradients into their ParamTensor buffers, scaled.
  void harvest_param_grads(T scale = T(1)) {
    for (auto& [node, p] : param_leaves_) {
      if (!node->grad_live()) continue;
      for (std::int64_t i = 0; i < node->vlen; ++i) p->grad[static_cast<std::size_t>(i)] += scale * node->grad[static_cast<std::size_t>(i)];
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::deque<Node<T>> nodes_;  // deque: stable addresses under push_back
  std::vector<std::pair<Node<T>*, ParamTensor<T>*>> param_leaves_;
};

template <typename T>
Tensor<T> to_tensor(const Value<T>& v) {
  Tensor<T> t;
  t.shape = v.shape();
  t.data.assign(v.val().begin(), v.val().end());
  return t;
}

}  // namespace dfrec
