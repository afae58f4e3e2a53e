#include "sned/numerics/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace sned {

Tensor<double> sym_psd_sqrt(const Tensor<double>& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ShapeError("sym_psd_sqrt: expected square matrix, got " + shape_str(a.shape()));
  const auto n = a.dim(0);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(a.data(), n, n);
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-6) throw std::invalid_argument("sym_psd_sqrt: matrix is not symmetric (max |A-A^T| = " + std::to_string(asym) + ")");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericError("sym_psd_sqrt: eigendecomposition failed");
  const Eigen::VectorXd roots = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd s = solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().transpose();
  Tensor<double> out(Shape{n, n});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] = 0.5 * (s(i, j) + s(j, i));
  return out;
}

}  // namespace sned
