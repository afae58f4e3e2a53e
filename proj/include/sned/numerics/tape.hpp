#pragma once

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "sned/numerics/tensor.hpp"

namespace sned {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode recording. Only values that depend on a marked variable carry
/// a backward closure; gradient buffers exist only for those values.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Var constant(Tensor<T> value);
  Var variable(Tensor<T> value);

  /// Records an op output. The closure is kept only if some input requires a
  /// gradient. Throws NumericError when the output holds NaN or Inf.
  Var record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of the last backward() target w.r.t. v, or nullptr if v is not
  /// differentiable or no gradient reached it.
  const Tensor<T>* grad(Var v) const;

  /// Zero-initialized accumulator for v's gradient; no-op target (nullptr) when
  /// v does not require a gradient.
  Tensor<T>* accumulator(Var v);

  void backward(Var scalar_loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace sned
