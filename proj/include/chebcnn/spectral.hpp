#pragma once

// Chebyshev spectral filtering of small symmetric operators:
// g_theta(L~) s = sum_k theta_k T_k(L~) s, evaluated with the matrix-vector
// recurrence z_{k+1} = 2 L~ z_k - z_{k-1}. T_k(L~) is never formed, which is
// what gives an order-K filter its K-hop locality on graph Laplacians.

#include <vector>

#include "chebcnn/matrix.hpp"

namespace chebcnn::spectral {

// A symmetric operator already rescaled into the Chebyshev domain:
// matrix = 2 L / lambda_max - I.
struct SpectralOperator {
  MatrixD matrix;
  double lambda_max = 0.0;  // bound used for the rescale
};

struct SpectralCoeffs {
  std::vector<double> theta;  // theta_0..theta_K
};

// Validates symmetry of L (|L - L^T| < 1e-10 elementwise) and lambda_max > 0,
// then returns the scaled operator.
SpectralOperator rescale(const MatrixD& laplacian, double lambda_max);

// sum_k theta_k T_k(L~) signal via the recurrence.
std::vector<double> apply_filter(const SpectralOperator& op,
                                 const SpectralCoeffs& coeffs,
                                 const std::vector<double>& signal);

// Combinatorial Laplacian of the d-vertex path graph.
MatrixD path_laplacian(int vertex_count);

// Largest Laplacian eigenvalue of the path graph, 4 sin^2((d-1) pi / (2d)).
double path_laplacian_lambda_max(int vertex_count);

}  // namespace chebcnn::spectral
