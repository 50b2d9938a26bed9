#include "omf/autodiff.hpp"

#include <sstream>

namespace omf {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::leaf(Tensor<Scalar> value, bool requires_grad) {
  if (!value.all_finite()) throw NonFiniteError("non-finite leaf value");
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(std::string_view op, Tensor<Scalar> value, const std::vector<NodeId>& inputs,
                                  BackwardFn backward) {
  if (!value.all_finite()) throw NonFiniteError("non-finite output from op '" + std::string(op) + "'");
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (NodeId id : inputs) node.requires_grad = node.requires_grad || nodes_.at(id).requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <typename Scalar>
Tensor<Scalar>* Graph<Scalar>::grad_slot(NodeId id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (!node.grad) node.grad = Tensor<Scalar>::zeros(node.value.shape());
  return &*node.grad;
}

template <typename Scalar>
GradientMap<Scalar> Graph<Scalar>::backward(Var<Scalar> loss) {
  if (loss.size() != 1) throw NonScalarError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  for (Node& node : nodes_) node.grad.reset();
  if (Tensor<Scalar>* seed = grad_slot(loss.id())) seed->data().setOnes();

  for (NodeId id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.grad || !node.backward) continue;
    node.backward(*this, node.value, *node.grad);
  }

  GradientMap<Scalar> grads;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    Node& node = nodes_[id];
    if (!node.is_leaf || !node.requires_grad) continue;
    grads.emplace(id, node.grad ? std::move(*node.grad) : Tensor<Scalar>::zeros(node.value.shape()));
    node.grad.reset();
  }
  return grads;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace omf
