#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sinogan/tensor.hpp"

namespace sinogan::ad {

class Graph;

// Lightweight handle to a node of a Graph. Valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// grad_in[i] is null when input i does not need a gradient; otherwise it points
// at a buffer of the input's shape that the rule must accumulate into.
using BackwardFn = std::function<void(const Graph& graph, const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

// Tape of operations recorded in creation order, which is a topological order.
// Confined to one thread for a forward+backward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Records an operation node. Used by the op implementations.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  const Tensor& value_at(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  // Gradient of the last backward() loss w.r.t. v; zeros if v was not reached.
  Tensor grad(Var v) const;

  // Populates gradients for every requires_grad node reachable from `loss`.
  // Gradients from an earlier call are discarded.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;
  };
  std::vector<Node> nodes_;
};

// 3x3 convolution, stride 1, zero same-padding.
// input [b,cin,h,w], kernel [cout,cin,3,3], bias [cout] -> [b,cout,h,w]
Var conv2d(Var input, Var kernel, Var bias);
// Disjoint 2x2 max; ties route gradient to the first element in scan order.
Var maxpool2(Var input);
// Nearest-neighbour 2x replication.
Var upsample2(Var input);
Var concat_channels(Var a, Var b);
// input [b,n], weight [m,n], bias [m] -> [b,m]
Var dense(Var input, Var weight, Var bias);
// [b, ...] -> [b, prod(...)]
Var flatten(Var input);

Var relu(Var x);
Var sigmoid(Var x);
Var linear(Var x);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var sum(Var x);

inline constexpr double kProbClamp = 1e-7;

Var l1_loss(Var pred, Var target);
// Probabilities clamped to [kProbClamp, 1 - kProbClamp] before the logarithm.
Var bce_loss(Var prob, Var label);
Var bce_loss(Var prob, double label);

}  // namespace sinogan::ad
