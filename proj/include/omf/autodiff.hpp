#pragma once

#include "omf/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace omf {

using NodeId = std::size_t;

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, NodeId id) : graph_(graph), id_(id) {}

  const Tensor<Scalar>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index rank() const { return value().rank(); }
  Index size() const { return value().size(); }
  bool requires_grad() const { return graph_->requires_grad(id_); }

  Graph<Scalar>& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Optional operand; non-deduced so callers may pass a Var or std::nullopt.
template <typename Scalar>
using OptionalVar = std::type_identity_t<std::optional<Var<Scalar>>>;

template <typename Scalar>
using GradientMap = std::map<NodeId, Tensor<Scalar>>;

/// Tape of operations in insertion order. References returned by value()
/// stay valid for the life of the graph. Single-threaded; separate graphs
/// share nothing and may live on separate threads.
template <typename Scalar>
class Graph {
 public:
  /// Propagates `out_grad` (the gradient of the node itself) into its inputs.
  using BackwardFn =
      std::function<void(Graph&, const Tensor<Scalar>& out_value, const Tensor<Scalar>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true);
  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  /// Appends an op result. The node tracks gradients iff any input does.
  /// Throws NonFiniteError if `value` holds NaN or Inf.
  Var<Scalar> record(std::string_view op, Tensor<Scalar> value, const std::vector<NodeId>& inputs,
                     BackwardFn backward);

  const Tensor<Scalar>& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  const std::string& op_name(NodeId id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator for `id`, zero-initialized on first use; nullptr
  /// for nodes that do not track gradients.
  Tensor<Scalar>* grad_slot(NodeId id);

  /// Reverse sweep from a scalar loss. Returns gradients for every leaf that
  /// requires grad (zeros where the loss does not depend on the leaf).
  GradientMap<Scalar> backward(Var<Scalar> loss);

 private:
  struct Node {
    std::string op;
    Tensor<Scalar> value;
    std::optional<Tensor<Scalar>> grad;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// ---- elementwise ---------------------------------------------------------

template <typename Scalar> Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> div(Var<Scalar> a, Var<Scalar> b);
/// `y.shape()` must equal a suffix of `x.shape()`; y is repeated over the
/// leading dimensions of x.
template <typename Scalar> Var<Scalar> add_broadcast(Var<Scalar> x, Var<Scalar> y);
template <typename Scalar> Var<Scalar> mul_broadcast(Var<Scalar> x, Var<Scalar> y);
template <typename Scalar> Var<Scalar> scale(Var<Scalar> x, Scalar factor);
template <typename Scalar> Var<Scalar> add_scalar(Var<Scalar> x, Scalar offset);
template <typename Scalar> Var<Scalar> sigmoid(Var<Scalar> x);
template <typename Scalar> Var<Scalar> relu(Var<Scalar> x);
template <typename Scalar> Var<Scalar> exp(Var<Scalar> x);
template <typename Scalar> Var<Scalar> log(Var<Scalar> x);
template <typename Scalar> Var<Scalar> abs(Var<Scalar> x);
template <typename Scalar> Var<Scalar> clamp(Var<Scalar> x, Scalar lo, Scalar hi);
/// x^p for x >= 0.
template <typename Scalar> Var<Scalar> pow_scalar(Var<Scalar> x, Scalar p);

// ---- reductions ----------------------------------------------------------

template <typename Scalar> Var<Scalar> sum(Var<Scalar> x);
template <typename Scalar> Var<Scalar> mean(Var<Scalar> x);
template <typename Scalar> Var<Scalar> sum_axis(Var<Scalar> x, Index axis);
template <typename Scalar> Var<Scalar> mean_axis(Var<Scalar> x, Index axis);

// ---- shape ---------------------------------------------------------------

template <typename Scalar> Var<Scalar> reshape(Var<Scalar> x, Shape shape);
template <typename Scalar> Var<Scalar> permute(Var<Scalar> x, const std::vector<Index>& perm);
template <typename Scalar> Var<Scalar> slice(Var<Scalar> x, Index axis, Index begin, Index end);
template <typename Scalar> Var<Scalar> concat(const std::vector<Var<Scalar>>& xs, Index axis);
template <typename Scalar> Var<Scalar> index_select(Var<Scalar> x, Index axis, const std::vector<Index>& indices);
/// Prepends a dimension of size n, copying x n times.
template <typename Scalar> Var<Scalar> repeat_leading(Var<Scalar> x, Index n);
/// Same value, no gradient path.
template <typename Scalar> Var<Scalar> detach(Var<Scalar> x);

// ---- linear algebra ------------------------------------------------------

template <typename Scalar> Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);
/// Batched product [B,m,k] x [B,k,n] -> [B,m,n].
template <typename Scalar> Var<Scalar> bmm(Var<Scalar> a, Var<Scalar> b);
/// x[..., k] * weight[k, n] (+ bias[n]) -> [..., n].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, OptionalVar<Scalar> bias = std::nullopt);

// ---- neural-network kernels ----------------------------------------------

/// Max-subtracted softmax along `axis` (negative axes count from the end).
template <typename Scalar> Var<Scalar> softmax(Var<Scalar> x, Index axis);
template <typename Scalar> Var<Scalar> log_softmax(Var<Scalar> x, Index axis);
/// Normalizes to zero mean, unit variance along `axis`; no affine part.
template <typename Scalar> Var<Scalar> layer_norm(Var<Scalar> x, Index axis, Scalar eps = Scalar(1e-5));

/// softmax(q k^T / sqrt(d)) v per head, d = C / heads. Accepts [L, C] or
/// batched [B, L, C] operands.
template <typename Scalar>
Var<Scalar> scaled_dot_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, Index heads = 1);

/// Cross-correlation of x [B,Ci,H,W] (or [Ci,H,W]) with kernels [Co,Ci,kh,kw].
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> kernels, OptionalVar<Scalar> bias, Index stride = 1,
                   Index padding = 0);

/// Nearest-neighbour upsampling of the last two axes.
template <typename Scalar> Var<Scalar> upsample_nearest(Var<Scalar> x, Index factor);
/// Bilinear upsampling of the last two axes, half-pixel centres, edge clamped.
template <typename Scalar> Var<Scalar> upsample_bilinear(Var<Scalar> x, Index factor);

/// Three stacked per-instance 1x1 convolutions (Cin -> hidden -> hidden -> 1,
/// ReLU between). features: [B, P, Cin]; params: [B, Q, K] with K =
/// dynamic_param_count(Cin, hidden), laid out as W1[hidden,Cin], b1, W2, b2,
/// w3[hidden], b3. Output: [B, Q, P] logits.
template <typename Scalar> Var<Scalar> dynamic_mask_head(Var<Scalar> features, Var<Scalar> params, Index hidden);

constexpr Index dynamic_param_count(Index in_channels, Index hidden) {
  return in_channels * hidden + hidden + hidden * hidden + hidden + hidden + 1;
}

// ---- operators -----------------------------------------------------------

template <typename Scalar> Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar> Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar> Var<Scalar> operator*(Scalar c, Var<Scalar> x) { return scale(x, c); }

}  // namespace omf
