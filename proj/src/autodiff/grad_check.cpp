#include "omf/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace omf {

template <typename Scalar>
Scalar grad_check(const MultiFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& inputs, Scalar eps) {
  std::vector<Tensor<Scalar>> analytic;
  {
    Graph<Scalar> g;
    std::vector<Var<Scalar>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    auto grads = g.backward(f(g, leaves));
    for (const auto& leaf : leaves) analytic.push_back(std::move(grads.at(leaf.id())));
  }

  auto evaluate = [&](const std::vector<Tensor<Scalar>>& xs) {
    Graph<Scalar> g;
    std::vector<Var<Scalar>> leaves;
    for (const auto& t : xs) leaves.push_back(g.constant(t));
    return f(g, leaves).value().item();
  };

  Scalar worst = 0;
  std::vector<Tensor<Scalar>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const Scalar original = probe[k][i];
      probe[k][i] = original + eps;
      const Scalar plus = evaluate(probe);
      probe[k][i] = original - eps;
      const Scalar minus = evaluate(probe);
      probe[k][i] = original;
      const Scalar numeric = (plus - minus) / (2 * eps);
      const Scalar err = std::abs(analytic[k][i] - numeric) / std::max(Scalar(1), std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template float grad_check<float>(const MultiFunction<float>&, const std::vector<Tensor<float>>&, float);
template double grad_check<double>(const MultiFunction<double>&, const std::vector<Tensor<double>>&, double);

}  // namespace omf
