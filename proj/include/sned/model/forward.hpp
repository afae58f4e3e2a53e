#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sned/model/network.hpp"
#include "sned/numerics/tape.hpp"

namespace sned {

/// Binds the active slices of a network under a spec to leaves of one tape.
/// Slices are gathered lazily on first use; with `trainable`, each leaf is a
/// marked variable whose gradient maps back to supernet elements.
template <typename T>
class SubnetBinding {
 public:
  struct Bound {
    int layer;
    Var var;
    Shape active;
  };

  SubnetBinding(const Network<T>& net, const SubnetSpec& spec, bool trainable);

  Var param(Tape<T>& tape, const std::string& name);
  const std::vector<Bound>& bound() const { return bound_; }
  const Network<T>& net() const { return *net_; }
  const SubnetSpec& spec() const { return spec_; }

 private:
  const Network<T>* net_;
  SubnetSpec spec_;
  bool trainable_;
  std::unordered_map<int, std::size_t> cache_;
  std::vector<Bound> bound_;
};

/// Sinusoidal timestep features [B, dim].
template <typename T>
Tensor<T> timestep_features(std::span<const int> t, int dim);

/// eps-prediction. x [B,F,C,H,W]; t [B]; captions [B*L] row-major; `cond`
/// (SSR role only) is the upsampled low-resolution video with x's shape.
template <typename T>
Var forward(Tape<T>& tape, SubnetBinding<T>& bind, Var x, std::span<const int> t, std::span<const int> captions,
            std::optional<Var> cond = std::nullopt);

/// Gradient-free convenience wrapper.
template <typename T>
Tensor<T> forward(const Network<T>& net, const SubnetSpec& spec, const Tensor<T>& x, std::span<const int> t,
                  std::span<const int> captions, const Tensor<T>* cond = nullptr);

}  // namespace sned
