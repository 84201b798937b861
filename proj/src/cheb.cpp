#include "chebcnn/cheb.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>

#include "chebcnn/errors.hpp"

namespace chebcnn::cheb {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::atomic<std::size_t> g_warning_count{0};
std::mutex g_handler_mutex;
WarningHandler g_handler;  // optional, counter always runs

void warn(const std::string& message) {
  g_warning_count.fetch_add(1, std::memory_order_relaxed);
  WarningHandler handler;
  {
    std::lock_guard<std::mutex> lock(g_handler_mutex);
    handler = g_handler;
  }
  if (handler) handler(message);
}

void check_finite_point(double x, const char* where) {
  if (!std::isfinite(x)) {
    std::ostringstream os;
    os << where << ": non-finite evaluation point " << x;
    throw InvalidInputError(os.str());
  }
}

}  // namespace

DomainMap::DomainMap(double a, double b) : a_(a), b_(b) {
  if (!(a < b)) throw InvalidInputError("DomainMap: requires a < b");
  if (!std::isfinite(a) || !std::isfinite(b))
    throw InvalidInputError("DomainMap: non-finite interval endpoint");
}

void set_warning_handler(WarningHandler handler) {
  std::lock_guard<std::mutex> lock(g_handler_mutex);
  g_handler = std::move(handler);
}

std::size_t warning_count() { return g_warning_count.load(); }

void reset_warning_count() { g_warning_count.store(0); }

ChebBasisEval eval_recurrence(double x, int order) {
  if (order < 0) throw InvalidInputError("eval_recurrence: order must be >= 0");
  check_finite_point(x, "eval_recurrence");

  ChebBasisEval out;
  out.order = order;
  out.values.resize(static_cast<std::size_t>(order) + 1);
  out.values[0] = 1.0;
  if (order >= 1) out.values[1] = x;
  for (int k = 1; k < order; ++k) {
    out.values[k + 1] = 2.0 * x * out.values[k] - out.values[k - 1];
  }
  if (x < -1.0 || x > 1.0) {
    out.out_of_domain = true;
    std::ostringstream os;
    os << "eval_recurrence: x = " << x << " outside [-1, 1]";
    warn(os.str());
  }
  return out;
}

MatrixD eval_grid(const std::vector<double>& xs, int order) {
  if (order < 0) throw InvalidInputError("eval_grid: order must be >= 0");
  MatrixD out(xs.size(), static_cast<std::size_t>(order) + 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const ChebBasisEval row = eval_recurrence(xs[i], order);
    for (int k = 0; k <= order; ++k) out(i, k) = row.values[k];
  }
  return out;
}

std::vector<double> cheb_gauss_nodes(int count) {
  if (count < 1) throw InvalidInputError("cheb_gauss_nodes: count must be >= 1");
  std::vector<double> nodes(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    nodes[j] = std::cos(kPi * (j + 0.5) / count);
  }
  return nodes;
}

ChebCoeffGrid fit_coeffs_2d(const MatrixD& samples, int order_x, int order_y) {
  if (order_x < 0 || order_y < 0)
    throw InvalidInputError("fit_coeffs_2d: orders must be >= 0");
  const std::size_t P = samples.rows();
  const std::size_t Q = samples.cols();
  if (P < static_cast<std::size_t>(order_x) + 1 ||
      Q < static_cast<std::size_t>(order_y) + 1) {
    std::ostringstream os;
    os << "fit_coeffs_2d: " << P << "x" << Q << " node grid too small; need at least "
       << order_x + 1 << "x" << order_y + 1 << " nodes";
    throw InvalidInputError(os.str());
  }
  for (double v : samples.data()) {
    if (!std::isfinite(v))
      throw InvalidInputError("fit_coeffs_2d: non-finite sample value");
  }

  const MatrixD bx = eval_grid(cheb_gauss_nodes(static_cast<int>(P)), order_x);
  const MatrixD by = eval_grid(cheb_gauss_nodes(static_cast<int>(Q)), order_y);

  // tmp(m, q) = sum_p T_m(x_p) f(x_p, y_q)
  MatrixD tmp(static_cast<std::size_t>(order_x) + 1, Q);
  for (std::size_t m = 0; m <= static_cast<std::size_t>(order_x); ++m) {
    for (std::size_t q = 0; q < Q; ++q) {
      double acc = 0.0;
      for (std::size_t p = 0; p < P; ++p) acc += bx(p, m) * samples(p, q);
      tmp(m, q) = acc;
    }
  }

  // C_mn = gamma_m gamma_n / (P Q) * sum_q tmp(m, q) T_n(y_q), gamma_0 = 1, else 2
  ChebCoeffGrid grid;
  grid.order_x = order_x;
  grid.order_y = order_y;
  grid.coeffs = MatrixD(static_cast<std::size_t>(order_x) + 1,
                        static_cast<std::size_t>(order_y) + 1);
  const double inv_pq = 1.0 / (static_cast<double>(P) * static_cast<double>(Q));
  for (std::size_t m = 0; m <= static_cast<std::size_t>(order_x); ++m) {
    const double gm = (m == 0) ? 1.0 : 2.0;
    for (std::size_t n = 0; n <= static_cast<std::size_t>(order_y); ++n) {
      const double gn = (n == 0) ? 1.0 : 2.0;
      double acc = 0.0;
      for (std::size_t q = 0; q < Q; ++q) acc += tmp(m, q) * by(q, n);
      grid.coeffs(m, n) = gm * gn * inv_pq * acc;
    }
  }
  return grid;
}

ChebCoeffGrid fit_coeffs_2d(const std::function<double(double, double)>& f,
                            int order_x, int order_y, int nodes_x, int nodes_y) {
  if (nodes_x < order_x + 1 || nodes_y < order_y + 1) {
    std::ostringstream os;
    os << "fit_coeffs_2d: " << nodes_x << "x" << nodes_y
       << " nodes insufficient; need at least " << order_x + 1 << "x" << order_y + 1;
    throw InvalidInputError(os.str());
  }
  const std::vector<double> xs = cheb_gauss_nodes(nodes_x);
  const std::vector<double> ys = cheb_gauss_nodes(nodes_y);
  MatrixD samples(xs.size(), ys.size());
  for (std::size_t p = 0; p < xs.size(); ++p) {
    for (std::size_t q = 0; q < ys.size(); ++q) samples(p, q) = f(xs[p], ys[q]);
  }
  return fit_coeffs_2d(samples, order_x, order_y);
}

MatrixD reconstruct_2d(const ChebCoeffGrid& grid, const std::vector<double>& xs,
                       const std::vector<double>& ys) {
  if (grid.coeffs.rows() != static_cast<std::size_t>(grid.order_x) + 1 ||
      grid.coeffs.cols() != static_cast<std::size_t>(grid.order_y) + 1)
    throw InvalidInputError("reconstruct_2d: coefficient grid does not match orders");
  const MatrixD bx = eval_grid(xs, grid.order_x);
  const MatrixD by = eval_grid(ys, grid.order_y);

  // out = Bx * C * By^T
  MatrixD tmp(xs.size(), grid.coeffs.cols());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t n = 0; n < grid.coeffs.cols(); ++n) {
      double acc = 0.0;
      for (std::size_t m = 0; m < grid.coeffs.rows(); ++m)
        acc += bx(i, m) * grid.coeffs(m, n);
      tmp(i, n) = acc;
    }
  }
  MatrixD out(xs.size(), ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < ys.size(); ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < grid.coeffs.cols(); ++n)
        acc += tmp(i, n) * by(j, n);
      out(i, j) = acc;
    }
  }
  return out;
}

}  // namespace chebcnn::cheb
