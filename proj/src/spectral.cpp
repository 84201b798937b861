#include "chebcnn/spectral.hpp"

#include <cmath>
#include <string>

#include "chebcnn/errors.hpp"

namespace chebcnn::spectral {

namespace {

std::vector<double> matvec(const MatrixD& m, const std::vector<double>& v) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * v[j];
    out[i] = acc;
  }
  return out;
}

}  // namespace

SpectralOperator rescale(const MatrixD& laplacian, double lambda_max) {
  if (laplacian.rows() != laplacian.cols())
    throw DimensionError("rescale: operator must be square, got " +
                         std::to_string(laplacian.rows()) + "x" +
                         std::to_string(laplacian.cols()));
  if (!(lambda_max > 0.0))
    throw InvalidInputError("rescale: lambda_max must be positive, got " +
                            std::to_string(lambda_max));
  const std::size_t d = laplacian.rows();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (std::fabs(laplacian(i, j) - laplacian(j, i)) >= 1e-10)
        throw InvalidInputError("rescale: operator is not symmetric at (" +
                                std::to_string(i) + ", " + std::to_string(j) + ")");

  SpectralOperator op;
  op.lambda_max = lambda_max;
  op.matrix = MatrixD(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      op.matrix(i, j) = 2.0 * laplacian(i, j) / lambda_max - (i == j ? 1.0 : 0.0);
  return op;
}

std::vector<double> apply_filter(const SpectralOperator& op,
                                 const SpectralCoeffs& coeffs,
                                 const std::vector<double>& signal) {
  const std::size_t d = op.matrix.rows();
  if (signal.size() != d)
    throw DimensionError("apply_filter: signal length " +
                         std::to_string(signal.size()) + " does not match operator "
                         "dimension " + std::to_string(d));
  if (coeffs.theta.empty())
    throw InvalidInputError("apply_filter: need at least theta_0");
  for (double t : coeffs.theta)
    if (!std::isfinite(t))
      throw InvalidInputError("apply_filter: non-finite filter coefficient");

  // z_0 = s, z_1 = L~ s, z_{k+1} = 2 L~ z_k - z_{k-1}
  std::vector<double> out(d, 0.0);
  std::vector<double> z_prev = signal;
  for (std::size_t i = 0; i < d; ++i) out[i] = coeffs.theta[0] * z_prev[i];
  if (coeffs.theta.size() == 1) return out;

  std::vector<double> z_cur = matvec(op.matrix, signal);
  for (std::size_t i = 0; i < d; ++i) out[i] += coeffs.theta[1] * z_cur[i];
  for (std::size_t k = 2; k < coeffs.theta.size(); ++k) {
    std::vector<double> z_next = matvec(op.matrix, z_cur);
    for (std::size_t i = 0; i < d; ++i) z_next[i] = 2.0 * z_next[i] - z_prev[i];
    for (std::size_t i = 0; i < d; ++i) out[i] += coeffs.theta[k] * z_next[i];
    z_prev = std::move(z_cur);
    z_cur = std::move(z_next);
  }
  return out;
}

MatrixD path_laplacian(int vertex_count) {
  if (vertex_count < 2)
    throw InvalidInputError("path_laplacian: need at least 2 vertices");
  const std::size_t d = static_cast<std::size_t>(vertex_count);
  MatrixD l(d, d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    l(i, i) = (i == 0 || i + 1 == d) ? 1.0 : 2.0;
    if (i + 1 < d) {
      l(i, i + 1) = -1.0;
      l(i + 1, i) = -1.0;
    }
  }
  return l;
}

double path_laplacian_lambda_max(int vertex_count) {
  const double d = static_cast<double>(vertex_count);
  const double s = std::sin((d - 1.0) * 3.14159265358979323846 / (2.0 * d));
  return 4.0 * s * s;
}

}  // namespace chebcnn::spectral
