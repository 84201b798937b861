#pragma once

// Independent reference computations used by the test suites. Everything here
// deliberately avoids the library's own code paths: trigonometric Chebyshev
// values, a Jacobi eigensolver, brute-force pair counting, and central finite
// differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "chebcnn/matrix.hpp"

namespace oracle {

// T_n(x) = cos(n arccos x) on [-1, 1].
inline double cheb_trig(int n, double x) {
  return std::cos(n * std::acos(std::min(1.0, std::max(-1.0, x))));
}

// Cyclic Jacobi rotations on a symmetric matrix. Returns eigenvalues and
// fills eigenvectors column-wise. Intended for d <= 16.
inline std::vector<double> jacobi_eigensymm(chebcnn::MatrixD a,
                                            chebcnn::MatrixD* vectors = nullptr) {
  const std::size_t n = a.rows();
  chebcnn::MatrixD v(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  if (vectors) *vectors = v;
  return eig;
}

// AUC as P(score+ > score-) + 0.5 P(tie), counted over all pairs.
inline double auc_pair_counting(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Pairwise confusion counting.
inline std::vector<std::vector<long long>> confusion_brute(
    const std::vector<int>& labels, const std::vector<int>& preds, int classes) {
  std::vector<std::vector<long long>> m(classes, std::vector<long long>(classes, 0));
  for (int t = 0; t < classes; ++t)
    for (int p = 0; p < classes; ++p)
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == t && preds[i] == p) ++m[t][p];
  return m;
}

// Central finite difference of a scalar function of one coordinate of a
// parameter vector.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> point, std::size_t index,
                           double h = 1e-5) {
  const double saved = point[index];
  point[index] = saved + h;
  const double fp = f(point);
  point[index] = saved - h;
  const double fm = f(point);
  point[index] = saved;
  return (fp - fm) / (2.0 * h);
}

}  // namespace oracle
