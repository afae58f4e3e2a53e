#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sned/model/layout.hpp"
#include "sned/numerics/tensor.hpp"

namespace sned {

/// Weight store plus architecture description. The supernet holds full-width
/// arrays; an extracted standalone network holds reduced arrays whose layout
/// shapes are the active widths, so the same forward code serves both.
template <typename T>
struct Network {
  ModelConfig config;
  Layout layout;
  std::vector<Tensor<T>> weights;  // parallel to layout.layers

  Tensor<T>& weight(const std::string& name) { return weights[static_cast<std::size_t>(layout.index_of(name))]; }
  const Tensor<T>& weight(const std::string& name) const {
    return weights[static_cast<std::size_t>(layout.index_of(name))];
  }
  std::int64_t total_elements() const;

  template <typename U>
  Network<U> cast() const {
    Network<U> out{config, layout, {}};
    for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
    return out;
  }
};

using Supernet = Network<float>;

template <typename T>
Network<T> build_network(const ModelConfig& config, std::uint64_t seed);

inline Supernet build_supernet(const ModelConfig& config, std::uint64_t seed) { return build_network<float>(config, seed); }

/// Leading-channel sub-array of a weight array; aliases the underlying storage.
template <typename T>
class SliceView {
 public:
  SliceView(T* base, Shape full, Shape active);

  const Shape& shape() const { return active_; }
  const Shape& full_shape() const { return full_; }
  std::int64_t numel() const { return shape_numel(active_); }

  /// Element at a multi-index inside the slice.
  T& at(std::initializer_list<std::int64_t> index) const;

  Tensor<T> gather() const;
  void scatter(const Tensor<T>& values) const;

  /// f(full_offset, slice_offset) for every element, slice offsets ascending.
  void for_each_offset(const std::function<void(std::int64_t, std::int64_t)>& f) const;

 private:
  T* base_;
  Shape full_;
  Shape active_;
};

/// Visits (full_offset, slice_offset) pairs of the leading slice `active` of `full`.
void for_each_slice_offset(const Shape& full, const Shape& active, const std::function<void(std::int64_t, std::int64_t)>& f);

/// Slice of layer `layer` with elastic output axis (0) at r_out and elastic
/// input axis (1) at r_in; fixed axes stay full.
template <typename T>
SliceView<T> slice_weights(Network<T>& net, int layer, double r_in, double r_out);

/// Slice of every axis as governed by the spec.
template <typename T>
SliceView<T> slice_for_spec(Network<T>& net, int layer, const SubnetSpec& spec);

/// Active element count under spec; dropped components count zero.
std::int64_t param_count(const ModelConfig& config, const Layout& layout, const SubnetSpec& spec);
template <typename T>
std::int64_t param_count(const Network<T>& net, const SubnetSpec& spec) {
  return param_count(net.config, net.layout, spec);
}

/// The spec under which `net` runs as a full network (all ratios 1, nothing dropped).
SubnetSpec native_spec(const ModelConfig& config, int resolution);

/// Zero-initialized temporal output projections, all other weights copied from
/// an image model (same config with temporal = false).
Supernet inflate_image_checkpoint(const Supernet& image, const ModelConfig& config, std::uint64_t seed = 0);

extern template struct Network<float>;
extern template struct Network<double>;
extern template class SliceView<float>;
extern template class SliceView<double>;

}  // namespace sned
