#include "sned/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sned {
namespace {

double evaluate(const ScalarFn& f, const Tensor<double>& x) {
  Tape<double> tape;
  const Var out = f(tape, tape.constant(x));
  const auto& v = tape.value(out);
  if (v.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  if (!std::isfinite(v[0])) throw NumericError("grad_check: non-finite value while probing");
  return v[0];
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps) {
  Tape<double> tape;
  const Var in = tape.variable(x);
  const Var out = f(tape, in);
  tape.backward(out);
  const Tensor<double>* g = tape.grad(in);
  const Tensor<double> analytic = g ? *g : Tensor<double>(x.shape());

  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    // Fourth-order central stencil.
    probe[i] = orig + eps;
    const double up1 = evaluate(f, probe);
    probe[i] = orig - eps;
    const double down1 = evaluate(f, probe);
    probe[i] = orig + 2.0 * eps;
    const double up2 = evaluate(f, probe);
    probe[i] = orig - 2.0 * eps;
    const double down2 = evaluate(f, probe);
    probe[i] = orig;
    const double numeric = (8.0 * (up1 - down1) - (up2 - down2)) / (12.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8));
  }
  return worst;
}

}  // namespace sned
