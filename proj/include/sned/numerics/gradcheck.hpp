#pragma once

#include <functional>

#include "sned/numerics/tape.hpp"

namespace sned {

using ScalarFn = std::function<Var(Tape<double>&, Var)>;

/// Compares the tape gradient of f at x with fourth-order central
/// differences of step eps. Returns
/// max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-8).
double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-3);

}  // namespace sned
