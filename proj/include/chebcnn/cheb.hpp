#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "chebcnn/matrix.hpp"

namespace chebcnn::cheb {

// T_0(x)..T_order(x) at a single point.
struct ChebBasisEval {
  int order = 0;
  std::vector<double> values;
  bool out_of_domain = false;  // |x| > 1; evaluation proceeds, see warning channel
};

// 2D expansion coefficients C_mn, shape (order_x+1) x (order_y+1).
struct ChebCoeffGrid {
  MatrixD coeffs;
  int order_x = 0;
  int order_y = 0;
};

// Linear bijection [a,b] -> [-1,1].
class DomainMap {
 public:
  DomainMap(double a, double b);
  double to_unit(double x) const { return 2.0 * (x - a_) / (b_ - a_) - 1.0; }
  double from_unit(double t) const { return a_ + 0.5 * (t + 1.0) * (b_ - a_); }
  double a() const { return a_; }
  double b() const { return b_; }

 private:
  double a_, b_;
};

// Soft warning channel for out-of-domain evaluation points. The default
// handler only counts; callers may install their own sink.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
std::size_t warning_count();
void reset_warning_count();

// T_k(x) for k = 0..order via T_{k+1} = 2x T_k - T_{k-1}.
ChebBasisEval eval_recurrence(double x, int order);

// Row i holds T_0(xs[i])..T_order(xs[i]).
MatrixD eval_grid(const std::vector<double>& xs, int order);

// Chebyshev-Gauss nodes cos(pi (j + 1/2) / count), strictly decreasing.
std::vector<double> cheb_gauss_nodes(int count);

// Quadrature fit of C_mn from samples(p, q) = f(x_p, y_q) taken at the
// tensor-product Gauss node grid. Exact for polynomials of order <= (M, N).
ChebCoeffGrid fit_coeffs_2d(const MatrixD& samples, int order_x, int order_y);

// Convenience overload: samples f itself at nodes_x x nodes_y Gauss nodes.
ChebCoeffGrid fit_coeffs_2d(const std::function<double(double, double)>& f,
                            int order_x, int order_y, int nodes_x, int nodes_y);

// out(i, j) = sum_mn C_mn T_m(xs[i]) T_n(ys[j]).
MatrixD reconstruct_2d(const ChebCoeffGrid& grid, const std::vector<double>& xs,
                       const std::vector<double>& ys);

}  // namespace chebcnn::cheb
