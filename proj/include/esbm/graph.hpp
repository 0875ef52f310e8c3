// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "esbm/tensor.hpp"

namespace esbm::ad {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct NodeId {
  std::uint32_t index = 0;
};

enum class Op : std::uint8_t {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  MatMul,
  BatchMatMul,
  Transpose,
  Reshape,
  Concat,
  Slice,
  Sum,
  Mean,
  SumAll,
  Broadcast,
  Exp,
  Log,
  Sqrt,
  Square,
  Softplus,
  Gelu,
  Softmax,
  LayerNorm,
  Dropout,
};

const char* op_name(Op op);

/// Named leaf values. Parameters and per-call inputs are bound the same way.
using Bindings = std::map<std::string, const Tensor*>;
using Gradients = std::map<std::string, Tensor>;
using ParameterSet = std::map<std::string, Tensor>;

struct EvalOptions {
  bool training = false;          // enables dropout
  std::uint64_t dropout_seed = 0;
  bool check_finite = true;       // raise NumericError on any non-finite intermediate
};

/// Static computation graph with reverse-mode differentiation.
///
/// Nodes are appended in topological order by the builder methods; shapes
/// are checked when the graph is evaluated, so one graph can be reused with
/// differently sized bindings. Elementwise binary ops broadcast only over
/// leading axes: one operand's shape must equal, or be a trailing suffix
/// of, the other's.
class Graph {
 public:
  NodeId input(std::string name, bool trainable = false);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);

  /// (..., m, k) x (k, n) -> (..., m, n)
  NodeId matmul(NodeId a, NodeId b);
  /// (B, m, k) x (B, k, n) -> (B, m, n); with transpose_b the right operand is (B, n, k).
  NodeId batch_matmul(NodeId a, NodeId b, bool transpose_b = false);
  NodeId transpose(NodeId a, std::vector<std::size_t> perm);
  /// One extent may be 0, meaning "whatever makes the element count match".
  NodeId reshape(NodeId a, Shape shape);
  NodeId concat(const std::vector<NodeId>& parts, std::size_t axis);
  NodeId slice(NodeId a, std::size_t axis, std::size_t begin, std::size_t end);
  NodeId sum(NodeId a, std::size_t axis);
  NodeId mean(NodeId a, std::size_t axis);
  NodeId sum_all(NodeId a);
  /// Prepends `leading` axes: result shape is leading ++ shape(a).
  NodeId broadcast(NodeId a, Shape leading);

  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId square(NodeId a);
  NodeId softplus(NodeId a);
  NodeId gelu(NodeId a);
  NodeId softmax(NodeId a, std::size_t axis);
  /// Normalises over the last axis (no affine part).
  NodeId layer_norm(NodeId a, double eps = 1e-5);
  NodeId dropout(NodeId a, double rate);

  /// Computes every node up to and including `root` and caches the values.
  const Tensor& evaluate(NodeId root, const Bindings& bindings, const EvalOptions& options = {});

  /// Cached value of an evaluated node.
  const Tensor& value(NodeId node) const;

  /// d(loss)/d(leaf) for every trainable input leaf reachable from `loss`.
  Gradients gradients(NodeId loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Node(Op o, std::vector<NodeId> in = {}) : op(o), inputs(std::move(in)) {}
    Op op;
    std::vector<NodeId> inputs;
    std::string name;                 // Input leaves
    bool trainable = false;
    bool requires_grad = false;
    std::vector<std::size_t> ints;    // axes, permutation, target shape, ...
    double real = 0.0;                // scale factor, eps, dropout rate
  };

  NodeId push(Node node);
  NodeId unary(Op op, NodeId a);
  NodeId binary(Op op, NodeId a, NodeId b);
  void check(NodeId id) const;
  void forward(std::size_t i, const Bindings& bindings, const EvalOptions& options);
  void backward(std::size_t i, const Tensor& grad, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> constants_;   // indexed by node, only populated for Constant
  std::vector<Tensor> values_;
  std::vector<Tensor> aux_;         // per-node saved state (masks, inverse std)
  std::size_t evaluated_ = 0;
};

}  // namespace esbm::ad
