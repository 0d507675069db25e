#pragma once

// Tape-based reverse-mode automatic differentiation. A Graph records every
// operation applied during one forward pass; backward() walks the tape in
// reverse and accumulates gradients into the Params that were read.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gnmap/nn/tensor.hpp"

namespace gnmap::nn {

class Graph;

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, Var self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf without gradient.
  Var constant(Tensor value);
  /// Leaf bound to a Param. Reading the same Param twice yields the same node.
  Var param(Param& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient buffer of a node (allocated on first use).
  std::vector<double>& grad(Var v);

  /// Records an op result. `parents` decide whether the node needs a gradient;
  /// `back` runs during backward() only in that case.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward back);
  Var record(Tensor value, std::span<const Var> parents, Backward back);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable Param,
  /// adding into Param::grad. `loss` must hold exactly one element. Throws
  /// std::logic_error when called a second time on the same graph.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backward back;
    Param* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<Param*, std::size_t>> param_nodes_;
  bool backward_done_ = false;
};

// ---- primitive ops ---------------------------------------------------------
// All ops throw std::invalid_argument on shape mismatch.

/// [n,k] x [k,m] -> [n,m]
Var matmul(Graph& g, Var a, Var b);
/// [n,k] x [m,k]^T -> [n,m]
Var matmul_nt(Graph& g, Var a, Var b);
Var add(Graph& g, Var a, Var b);
/// x[n,m] + bias[m] broadcast over rows.
Var add_bias(Graph& g, Var x, Var bias);
Var scale(Graph& g, Var x, double s);
/// Element-wise x * y.
Var mul(Graph& g, Var a, Var b);
/// x * Phi(x) with the exact normal CDF.
Var gelu(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);
/// Softmax over the last axis, max-subtracted. Throws on non-finite input.
Var softmax(Graph& g, Var x);
/// Per-row normalization of x[n,d] then gamma * xhat + beta.
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps);
/// Columns [start, start+len) of x[n,m].
Var slice_cols(Graph& g, Var x, std::size_t start, std::size_t len);
/// Column-wise concatenation of [n, m_i] pieces.
Var concat_cols(Graph& g, std::span<const Var> parts);
/// Concatenation along axis 0; trailing dims must agree.
Var concat0(Graph& g, std::span<const Var> parts);
/// out.flat[i] = x.flat[index[i]]; repeated indices accumulate in backward.
Var gather(Graph& g, Var x, std::vector<std::size_t> index, Shape out_shape);
Var reshape(Graph& g, Var x, Shape shape);
/// Same-padded, stride-1 cross-correlation: x[ci,h,w], k[co,ci,kh,kw], b[co].
Var conv2d(Graph& g, Var x, Var kernels, Var bias);
Var sum(Graph& g, Var x);
/// Sum of element-wise products with a fixed tensor.
Var dot_const(Graph& g, Var x, const Tensor& weights);
/// mean((y - target)^2) over all elements.
Var mse_loss(Graph& g, Var y, const Tensor& target);
/// -(1/n) sum_i target_i . log(max(y_i, 1e-12)) over rows of y[n,c]. Throws
/// when a row of y does not sum to 1 (1e-6) or a target row is not one-hot.
Var ce_loss(Graph& g, Var y, const Tensor& target_onehot);

}  // namespace gnmap::nn
