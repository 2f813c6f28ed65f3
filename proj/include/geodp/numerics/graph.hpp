#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geodp/numerics/params.hpp"
#include "geodp/numerics/tensor.hpp"

namespace geodp::ad {

template <class T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

// Define-by-run tape. Nodes are appended in execution order, which is a
// topological order by construction; backward walks the tape in reverse.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), nullptr, false); }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return push("leaf", std::move(value), nullptr, requires_grad && grad_enabled_);
  }

  // Binds a parameter store; params are referenced, never copied.
  void attach(const ParamStore<T>& store) {
    store_ = &store;
    param_nodes_.assign(store.size(), kUnbound);
  }

  Var<T> param(std::size_t slot) {
    require(store_ != nullptr, ErrorKind::usage, "graph has no parameter store attached");
    require(slot < param_nodes_.size(), ErrorKind::usage,
            "parameter slot " + std::to_string(slot) + " out of range");
    if (param_nodes_[slot] == kUnbound) {
      Node n;
      n.op = "param";
      n.external = &store_->value(slot);
      n.requires_grad = grad_enabled_;
      n.param_slot = static_cast<std::int64_t>(slot);
      nodes_.push_back(std::move(n));
      param_nodes_[slot] = static_cast<std::uint32_t>(nodes_.size() - 1);
    }
    return Var<T>{this, param_nodes_[slot]};
  }

  const Tensor<T>& value(Var<T> v) const { return node(v).value(); }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  const Tensor<T>& value(std::uint32_t id) const { return nodes_[id].value(); }
  std::string_view op_name(Var<T> v) const { return node(v).op; }

  // Appends an op result. The output must be finite; the backward closure is
  // retained only when some input needs a gradient.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var<T> record(std::string_view op, Tensor<T> value, std::span<const Var<T>> inputs,
                BackwardFn backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owned(in, op);
      needs = needs || nodes_[in.id].requires_grad;
    }
    if (!value.all_finite())
      fail(ErrorKind::numeric, "non-finite output in node " + std::to_string(nodes_.size()) +
                                   " (" + std::string(op) + ")");
    needs = needs && grad_enabled_;
    return push(op, std::move(value), needs ? std::move(backward) : nullptr, needs);
  }

  void backward(Var<T> out) {
    require(value(out).size() == 1, ErrorKind::usage,
            "backward without a seed requires a scalar output");
    backward(out, Tensor<T>::full(value(out).shape(), T{1}));
  }

  void backward(Var<T> out, const Tensor<T>& seed) {
    check_owned(out, "backward");
    require(grad_enabled_, ErrorKind::usage, "backward on a graph built without gradients");
    require(nodes_[out.id].requires_grad, ErrorKind::usage,
            "backward from a node that does not depend on any differentiable input");
    require(seed.shape() == value(out).shape(), ErrorKind::shape,
            "seed gradient shape " + to_string(seed.shape()) + " does not match output " +
                to_string(value(out).shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_[out.id].grad = seed;
    for (std::int64_t i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, static_cast<std::uint32_t>(i));
    }
    backward_done_ = true;
  }

  bool has_gradients() const noexcept { return backward_done_; }

  const Tensor<T>& grad(Var<T> v) const {
    require(backward_done_, ErrorKind::usage, "gradient requested before backward");
    const Node& n = node(v);
    if (n.grad.empty()) {
      zero_cache_ = Tensor<T>(n.value().shape());
      return zero_cache_;
    }
    return n.grad;
  }

  // Gradient for a parameter slot (zeros when the slot was never used).
  Tensor<T> param_grad(std::size_t slot) const {
    require(backward_done_, ErrorKind::usage, "gradient requested before backward");
    require(store_ != nullptr && slot < param_nodes_.size(), ErrorKind::usage,
            "parameter slot " + std::to_string(slot) + " out of range");
    const std::uint32_t id = param_nodes_[slot];
    if (id == kUnbound || nodes_[id].grad.empty())
      return Tensor<T>(store_->value(slot).shape());
    return nodes_[id].grad;
  }

  // Used by backward closures.
  const Tensor<T>& grad_of(std::uint32_t id) const { return nodes_[id].grad; }

  Tensor<T>& grad_acc(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
    return n.grad;
  }

 private:
  static constexpr std::uint32_t kUnbound = UINT32_MAX;

  struct Node {
    std::string_view op;
    Tensor<T> own;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::int64_t param_slot = -1;

    const Tensor<T>& value() const { return external ? *external : own; }
  };

  Var<T> push(std::string_view op, Tensor<T> value, BackwardFn fn, bool requires_grad) {
    Node n;
    n.op = op;
    n.own = std::move(value);
    n.backward = std::move(fn);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Node& node(Var<T> v) const {
    check_owned(v, "access");
    return nodes_[v.id];
  }

  void check_owned(Var<T> v, std::string_view op) const {
    if (v.graph != this || v.id >= nodes_.size())
      fail(ErrorKind::usage, "variable passed to " + std::string(op) +
                                 " does not belong to this graph");
  }

  std::deque<Node> nodes_;
  const ParamStore<T>* store_ = nullptr;
  std::vector<std::uint32_t> param_nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
  mutable Tensor<T> zero_cache_;
};

}  // namespace geodp::ad
