#pragma once

#include "omf/parameters.hpp"

#include <string>

namespace omf {

// Parameter registration. Names are `<prefix>.<part>`.
template <typename Scalar>
void add_linear(ParameterSet<Scalar>& ps, const std::string& prefix, Index in, Index out, std::mt19937_64& rng);
template <typename Scalar>
void add_attention(ParameterSet<Scalar>& ps, const std::string& prefix, Index query_dim, Index key_dim, Index dim,
                   std::mt19937_64& rng);
template <typename Scalar>
void add_layer_norm(ParameterSet<Scalar>& ps, const std::string& prefix, Index dim);
template <typename Scalar>
void add_conv(ParameterSet<Scalar>& ps, const std::string& prefix, Index in, Index out, Index kernel,
              std::mt19937_64& rng);

template <typename Scalar>
Var<Scalar> dense(Binding<Scalar>& p, const std::string& prefix, Var<Scalar> x) {
  return linear(x, p[prefix + ".w"], p[prefix + ".b"]);
}

template <typename Scalar>
Var<Scalar> conv(Binding<Scalar>& p, const std::string& prefix, Var<Scalar> x, Index stride = 1, Index padding = 0) {
  return conv2d(x, p[prefix + ".w"], p[prefix + ".b"], stride, padding);
}

template <typename Scalar>
Var<Scalar> layer_norm_affine(Binding<Scalar>& p, const std::string& prefix, Var<Scalar> x, Scalar eps) {
  return add_broadcast(mul_broadcast(layer_norm(x, -1, eps), p[prefix + ".gamma"]), p[prefix + ".beta"]);
}

/// Projected cross-attention: out = Wo * Attn(Wq q, Wk k, Wv v). No residual.
/// Operands are [L, C] or batched [B, L, C].
template <typename Scalar>
Var<Scalar> cross_attention(Binding<Scalar>& p, const std::string& prefix, Var<Scalar> query, Var<Scalar> key,
                            Var<Scalar> value, Index heads) {
  auto q = dense(p, prefix + ".q", query);
  auto k = dense(p, prefix + ".k", key);
  auto v = dense(p, prefix + ".v", value);
  return dense(p, prefix + ".o", scaled_dot_attention(q, k, v, heads));
}

/// Fixed sinusoidal encoding of positions first..first+length-1, shape [length, dim].
template <typename Scalar>
Tensor<Scalar> sinusoidal_encoding(Index length, Index dim, Index first = 0);

/// Fixed 2-D encoding for a row-major h x w grid: first half of the channels
/// encodes the row, second half the column. Shape [h*w, dim].
template <typename Scalar>
Tensor<Scalar> grid_encoding(Index height, Index width, Index dim);

}  // namespace omf
