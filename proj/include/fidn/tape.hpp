#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fidn/error.hpp"
#include "fidn/tensor.hpp"

namespace fidn {

// Handle to a value recorded on a Tape. Only meaningful for the tape that
// issued it.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

// Append-only record of a computation for reverse-mode differentiation.
// Nodes are stored in creation order, so inputs always precede consumers and
// a single reverse sweep visits every node once.
template <typename T>
class Tape {
 public:
  // Reads grad(self) and accumulates into the gradients of its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, requires_grad, true});
    return Var{nodes_.size() - 1};
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || node(v).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs),
                          needs ? std::move(backward) : BackwardFn{}, needs, false});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const std::vector<Var>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient after backward(); zeros for a node the loss does not reach.
  Tensor<T> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  // Lazily zero-initialised accumulator; used by backward functions.
  Tensor<T>& grad_slot(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T>& grad_slot(std::size_t id) { return grad_slot(Var{id}); }

  void backward(Var loss) {
    const Node& root = node(loss);
    if (root.value.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " +
                       shape_string(root.value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    grad_slot(loss).fill(T{1});
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
    for (Node& n : nodes_) {
      if (n.is_leaf && n.requires_grad && n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw ValidationError("variable does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ValidationError("variable does not belong to this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

}  // namespace fidn
