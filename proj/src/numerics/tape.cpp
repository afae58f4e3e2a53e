#include "sned/numerics/tape.hpp"

#include <string>

namespace sned {

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("tape variable " + std::to_string(v.id) + " does not exist");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("tape variable " + std::to_string(v.id) + " does not exist");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, false, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::variable(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, true, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op) + " with shape " +
                       shape_str(value.shape()));
  }
  bool needs = false;
  for (Var in : inputs) {
    if (in.valid() && node(in).requires_grad) needs = true;
  }
  nodes_.push_back(Node{std::move(value), std::nullopt, needs, needs ? std::move(backward) : Backward{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  return n.grad ? &*n.grad : nullptr;
}

template <typename T>
Tensor<T>* Tape<T>::accumulator(Var v) {
  if (!v.valid()) return nullptr;
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (!n.grad) n.grad.emplace(n.value.shape());
  return &*n.grad;
}

template <typename T>
void Tape<T>::backward(Var scalar_loss) {
  Node& root = node(scalar_loss);
  if (root.value.numel() != 1) {
    throw ShapeError("backward requires a scalar, got shape " + shape_str(root.value.shape()));
  }
  for (Node& n : nodes_) n.grad.reset();
  if (!root.requires_grad) return;
  root.grad.emplace(root.value.shape(), T{1});
  for (int i = scalar_loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad) n.backward(*this, *n.grad);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace sned
