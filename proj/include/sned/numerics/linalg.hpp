#pragma once

#include "sned/numerics/tensor.hpp"

namespace sned {

/// Principal square root of a symmetric positive semi-definite matrix via a
/// symmetric eigendecomposition. Eigenvalues below zero are clamped to zero.
/// Throws std::invalid_argument when |A - A^T| exceeds 1e-6 anywhere.
Tensor<double> sym_psd_sqrt(const Tensor<double>& a);

}  // namespace sned
