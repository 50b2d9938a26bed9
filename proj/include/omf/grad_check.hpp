#pragma once

#include "omf/autodiff.hpp"

#include <functional>
#include <vector>

namespace omf {

/// Scalar-valued function of graph leaves, used by the finite-difference check.
template <typename Scalar>
using MultiFunction = std::function<Var<Scalar>(Graph<Scalar>&, const std::vector<Var<Scalar>>&)>;
template <typename Scalar>
using UnaryFunction = std::function<Var<Scalar>(Graph<Scalar>&, Var<Scalar>)>;

/// Compares reverse-mode gradients against central differences for every
/// coordinate of every input. Returns max |analytic - numeric| / max(1, |numeric|).
template <typename Scalar>
Scalar grad_check(const MultiFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& inputs, Scalar eps);

template <typename Scalar>
Scalar grad_check(const UnaryFunction<Scalar>& f, const Tensor<Scalar>& x, Scalar eps) {
  return grad_check<Scalar>(
      MultiFunction<Scalar>([&f](Graph<Scalar>& g, const std::vector<Var<Scalar>>& v) { return f(g, v[0]); }),
      std::vector<Tensor<Scalar>>{x}, eps);
}

}  // namespace omf
