#pragma once

#include "sned/numerics/tensor.hpp"

namespace sned {

/// Triangle-filter resampling over the two trailing axes with half-pixel
/// centers. When shrinking, the filter support grows by the scale factor so
/// every input pixel contributes (antialiasing). Per-pixel weights sum to 1.
template <typename T>
Tensor<T> resize_bilinear_antialiased(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w);

}  // namespace sned
