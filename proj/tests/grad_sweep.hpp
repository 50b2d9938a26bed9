#pragma once

// One random instance of every differentiable op, each checked against
// central differences. Shared by the unit tests and the acceptance binary.

#include "omf/autodiff.hpp"
#include "omf/grad_check.hpp"
#include "omf/losses.hpp"

#include "oracles.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sweep {

using namespace omf;
using T = Tensor<double>;
using V = Var<double>;
using G = Graph<double>;
using oracle::random_tensor;

/// Projects y to a scalar so every element gets a distinct upstream gradient.
inline V readout(G& g, V y) {
  T w(y.shape());
  for (Index i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  return sum(mul(y, g.constant(w)));
}

using Errors = std::vector<std::pair<std::string, double>>;

/// Max relative error per op for one instance with random shapes.
inline Errors op_grad_errors(std::mt19937_64& rng, double eps = 1e-6) {
  std::uniform_int_distribution<int> dim(2, 5);
  const Index a = dim(rng), b = dim(rng), c = dim(rng);
  Errors errors;
  auto check = [&](const char* name, const MultiFunction<double>& f, std::vector<T> inputs) {
    errors.emplace_back(name, grad_check(f, inputs, eps));
  };
  check("add", [](G& g, const std::vector<V>& v) { return readout(g, add(v[0], v[1])); },
        {random_tensor({a, b}, rng), random_tensor({a, b}, rng)});
  check("sub", [](G& g, const std::vector<V>& v) { return readout(g, sub(v[0], v[1])); },
        {random_tensor({a, b}, rng), random_tensor({a, b}, rng)});
  check("mul", [](G& g, const std::vector<V>& v) { return readout(g, mul(v[0], v[1])); },
        {random_tensor({a, b}, rng), random_tensor({a, b}, rng)});
  check("div", [](G& g, const std::vector<V>& v) { return readout(g, div(v[0], v[1])); },
        {random_tensor({a, b}, rng), random_tensor({a, b}, rng, 0.5, 2.0)});
  check("add_broadcast", [](G& g, const std::vector<V>& v) { return readout(g, add_broadcast(v[0], v[1])); },
        {random_tensor({a, b, c}, rng), random_tensor({b, c}, rng)});
  check("mul_broadcast", [](G& g, const std::vector<V>& v) { return readout(g, mul_broadcast(v[0], v[1])); },
        {random_tensor({a, b, c}, rng), random_tensor({c}, rng)});
  check("scale", [](G& g, const std::vector<V>& v) { return readout(g, scale(v[0], -1.7)); },
        {random_tensor({a, b}, rng)});
  check("add_scalar", [](G& g, const std::vector<V>& v) { return readout(g, add_scalar(v[0], 0.4)); },
        {random_tensor({a}, rng)});
  check("sigmoid", [](G& g, const std::vector<V>& v) { return readout(g, sigmoid(v[0])); },
        {random_tensor({a, b}, rng, -4, 4)});
  check("relu", [](G& g, const std::vector<V>& v) { return readout(g, relu(v[0])); },
        {random_tensor({a, b}, rng)});
  check("exp", [](G& g, const std::vector<V>& v) { return readout(g, exp(v[0])); }, {random_tensor({a, b}, rng)});
  check("log", [](G& g, const std::vector<V>& v) { return readout(g, log(v[0])); },
        {random_tensor({a, b}, rng, 0.2, 3.0)});
  check("abs", [](G& g, const std::vector<V>& v) { return readout(g, abs(v[0])); }, {random_tensor({a, b}, rng)});
  check("clamp", [](G& g, const std::vector<V>& v) { return readout(g, clamp(v[0], -0.5, 0.5)); },
        {random_tensor({a, b}, rng)});
  check("pow_scalar", [](G& g, const std::vector<V>& v) { return readout(g, pow_scalar(v[0], 2.5)); },
        {random_tensor({a, b}, rng, 0.1, 2.0)});
  check("sum", [](G&, const std::vector<V>& v) { return scale(sum(v[0]), 0.3); }, {random_tensor({a, b}, rng)});
  check("mean", [](G&, const std::vector<V>& v) { return mean(v[0]); }, {random_tensor({a, b}, rng)});
  check("sum_axis", [](G& g, const std::vector<V>& v) { return readout(g, sum_axis(v[0], 1)); },
        {random_tensor({a, b, c}, rng)});
  check("mean_axis", [](G& g, const std::vector<V>& v) { return readout(g, mean_axis(v[0], 0)); },
        {random_tensor({a, b, c}, rng)});
  check("reshape", [c](G& g, const std::vector<V>& v) { return readout(g, reshape(v[0], {c, v[0].size() / c})); },
        {random_tensor({a, b, c}, rng)});
  check("permute", [](G& g, const std::vector<V>& v) { return readout(g, permute(v[0], {2, 0, 1})); },
        {random_tensor({a, b, c}, rng)});
  check("slice", [](G& g, const std::vector<V>& v) { return readout(g, slice(v[0], 1, 1, 2)); },
        {random_tensor({a, b, c}, rng)});
  check("concat", [](G& g, const std::vector<V>& v) { return readout(g, concat<double>({v[0], v[1]}, 1)); },
        {random_tensor({a, b, c}, rng), random_tensor({a, 2, c}, rng)});
  check("index_select", [](G& g, const std::vector<V>& v) { return readout(g, index_select(v[0], 1, {1, 0, 1})); },
        {random_tensor({a, b, c}, rng)});
  check("repeat_leading", [](G& g, const std::vector<V>& v) { return readout(g, repeat_leading(v[0], 3)); },
        {random_tensor({a, b}, rng)});
  check("matmul", [](G& g, const std::vector<V>& v) { return readout(g, matmul(v[0], v[1])); },
        {random_tensor({a, b}, rng), random_tensor({b, c}, rng)});
  check("bmm", [](G& g, const std::vector<V>& v) { return readout(g, bmm(v[0], v[1])); },
        {random_tensor({2, a, b}, rng), random_tensor({2, b, c}, rng)});
  check("linear", [](G& g, const std::vector<V>& v) { return readout(g, linear(v[0], v[1], v[2])); },
        {random_tensor({a, b, c}, rng), random_tensor({c, 3}, rng), random_tensor({3}, rng)});
  check("softmax", [](G& g, const std::vector<V>& v) { return readout(g, softmax(v[0], 1)); },
        {random_tensor({a, b, c}, rng, -3, 3)});
  check("log_softmax", [](G& g, const std::vector<V>& v) { return readout(g, log_softmax(v[0], -1)); },
        {random_tensor({a, b}, rng, -3, 3)});
  check("layer_norm", [](G& g, const std::vector<V>& v) { return readout(g, layer_norm(v[0], -1)); },
        {random_tensor({a, b + 2}, rng)});
  check("layer_norm_axis0", [](G& g, const std::vector<V>& v) { return readout(g, layer_norm(v[0], 0)); },
        {random_tensor({a + 1, b}, rng)});
  check("attention", [](G& g, const std::vector<V>& v) { return readout(g, scaled_dot_attention(v[0], v[1], v[2], 2)); },
        {random_tensor({2, a, 4}, rng), random_tensor({2, b, 4}, rng), random_tensor({2, b, 6}, rng)});
  check("conv2d", [](G& g, const std::vector<V>& v) { return readout(g, conv2d(v[0], v[1], v[2], 2, 1)); },
        {random_tensor({2, 2, a + 3, b + 3}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  check("upsample_nearest", [](G& g, const std::vector<V>& v) { return readout(g, upsample_nearest(v[0], 2)); },
        {random_tensor({2, a, b}, rng)});
  check("upsample_bilinear", [](G& g, const std::vector<V>& v) { return readout(g, upsample_bilinear(v[0], 4)); },
        {random_tensor({2, a, b}, rng)});
  check("dynamic_mask_head",
        [](G& g, const std::vector<V>& v) { return readout(g, dynamic_mask_head(v[0], v[1], 3)); },
        {random_tensor({2, a * b, 4}, rng), random_tensor({2, c, dynamic_param_count(4, 3)}, rng)});
  return errors;
}

/// Max relative error of the total loss w.r.t. every head output, one
/// random instance with a partially absent target.
inline double loss_grad_error(std::mt19937_64& rng, double eps = 1e-6) {
  const Index nq = 3, frames = 4, h = 3, w = 4;
  std::uniform_int_distribution<Index> ys(0, h - 2), xs(0, w - 2);
  std::vector<Mask> masks;
  for (Index t = 0; t < frames; ++t) {
    Mask m = Mask::Zero(h, w);
    if (t != 0) m.block(ys(rng), xs(rng), 2, 2).setConstant(true);
    masks.push_back(m);
  }
  auto gt = make_ground_truth<double>(std::move(masks));
  std::bernoulli_distribution coin(0.7);
  gt.start_observed = coin(rng);
  gt.end_observed = coin(rng);
  const Index j = std::uniform_int_distribution<Index>(0, nq - 1)(rng);
  const LossConfig cfg;
  MultiFunction<double> f = [&](G&, const std::vector<V>& v) {
    return total_loss(ForwardOutputs<double>{v[0], v[1], v[2], v[3], v[4]}, gt, j, cfg).total;
  };
  return grad_check<double>(f,
                            {random_tensor({nq, frames, h, w}, rng, -3, 3), random_tensor({nq, frames, 4}, rng, 0.1, 0.9),
                             random_tensor({nq, frames, 2}, rng, -2, 2), random_tensor({nq}, rng, -2, 2),
                             random_tensor({nq, frames}, rng, -2, 2)},
                            eps);
}

}  // namespace sweep
