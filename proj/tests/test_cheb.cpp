#include <cmath>
#include <vector>

#include "chebcnn/cheb.hpp"
#include "chebcnn/errors.hpp"
#include "chebcnn/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using chebcnn::DimensionError;
using chebcnn::InvalidInputError;
using chebcnn::MatrixD;
namespace cheb = chebcnn::cheb;

TEST_CASE("eval_recurrence base cases") {
  auto e = cheb::eval_recurrence(0.7, 1);
  REQUIRE(e.values.size() == 2);
  CHECK(e.values[0] == doctest::Approx(1.0));
  CHECK(e.values[1] == doctest::Approx(0.7));

  auto e3 = cheb::eval_recurrence(0.5, 3);
  CHECK(e3.values[0] == doctest::Approx(1.0));
  CHECK(e3.values[1] == doctest::Approx(0.5));
  CHECK(e3.values[2] == doctest::Approx(-0.5));
  CHECK(e3.values[3] == doctest::Approx(-1.0));

  auto e5 = cheb::eval_recurrence(1.0, 5);
  for (double v : e5.values) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("eval_recurrence matches trigonometric identity") {
  double max_err = 0.0;
  for (int n = 0; n <= 12; ++n) {
    for (int i = 0; i <= 200; ++i) {
      const double x = -1.0 + 2.0 * i / 200.0;
      const auto e = cheb::eval_recurrence(x, n);
      max_err = std::max(max_err, std::fabs(e.values[n] - oracle::cheb_trig(n, x)));
    }
  }
  CHECK(max_err < 1e-9);
}

TEST_CASE("boundedness on [-1,1]") {
  for (int n = 0; n <= 12; ++n) {
    for (int i = 0; i <= 200; ++i) {
      const double x = -1.0 + 2.0 * i / 200.0;
      const auto e = cheb::eval_recurrence(x, n);
      CHECK(std::fabs(e.values[n]) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("eval_recurrence rejects non-finite, warns out of domain") {
  CHECK_THROWS_AS(cheb::eval_recurrence(std::nan(""), 2), InvalidInputError);
  CHECK_THROWS_AS(cheb::eval_recurrence(0.5, -1), InvalidInputError);

  cheb::reset_warning_count();
  auto e = cheb::eval_recurrence(1.5, 4);
  CHECK(e.out_of_domain);
  CHECK(cheb::warning_count() == 1);
  // Recurrence still defined outside the interval.
  CHECK(e.values[2] == doctest::Approx(2 * 1.5 * 1.5 - 1));
  cheb::reset_warning_count();
}

TEST_CASE("eval_grid rows match pointwise evaluation") {
  const MatrixD g = cheb::eval_grid({-1.0, 0.0, 1.0}, 2);
  const double expected[3][3] = {{1, -1, 1}, {1, 0, -1}, {1, 1, 1}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(g(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-12));

  const MatrixD single = cheb::eval_grid({0.0}, 0);
  REQUIRE(single.rows() == 1);
  REQUIRE(single.cols() == 1);
  CHECK(single(0, 0) == doctest::Approx(1.0));

  const MatrixD half = cheb::eval_grid({0.5}, 3);
  CHECK(half(0, 2) == doctest::Approx(-0.5));
  CHECK(half(0, 3) == doctest::Approx(-1.0));

  const MatrixD empty = cheb::eval_grid({}, 4);
  CHECK(empty.rows() == 0);
}

TEST_CASE("cheb_gauss_nodes closed form") {
  CHECK_THROWS_AS(cheb::cheb_gauss_nodes(0), InvalidInputError);

  const auto one = cheb::cheb_gauss_nodes(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == doctest::Approx(0.0).epsilon(1e-15));

  const auto two = cheb::cheb_gauss_nodes(2);
  CHECK(two[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(two[1] == doctest::Approx(-std::sqrt(0.5)));

  const auto four = cheb::cheb_gauss_nodes(4);
  REQUIRE(four.size() == 4);
  for (std::size_t j = 0; j + 1 < 4; ++j) CHECK(four[j] > four[j + 1]);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(four[j] == doctest::Approx(-four[3 - j]).epsilon(1e-14));
    CHECK(std::fabs(four[j]) < 1.0);
  }
}

TEST_CASE("discrete orthogonality at 64 nodes") {
  const auto nodes = cheb::cheb_gauss_nodes(64);
  const MatrixD basis = cheb::eval_grid(nodes, 10);
  for (int i = 0; i <= 10; ++i) {
    for (int j = 0; j <= 10; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < nodes.size(); ++p) acc += basis(p, i) * basis(p, j);
      acc /= static_cast<double>(nodes.size());
      if (i != j) {
        CHECK(std::fabs(acc) < 1e-10);
      } else if (i == 0) {
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-10));
      } else {
        CHECK(acc == doctest::Approx(0.5).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("fit_coeffs_2d recovers polynomial coefficients") {
  SUBCASE("constant") {
    auto grid = cheb::fit_coeffs_2d(
        [](double, double) { return 1.0; }, 2, 2, 8, 8);
    CHECK(grid.coeffs(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    for (int m = 0; m <= 2; ++m)
      for (int n = 0; n <= 2; ++n)
        if (m != 0 || n != 0) CHECK(std::fabs(grid.coeffs(m, n)) < 1e-12);
  }
  SUBCASE("xy") {
    auto grid = cheb::fit_coeffs_2d(
        [](double x, double y) { return x * y; }, 3, 3, 8, 8);
    CHECK(grid.coeffs(1, 1) == doctest::Approx(1.0).epsilon(1e-10));
    for (int m = 0; m <= 3; ++m)
      for (int n = 0; n <= 3; ++n)
        if (m != 1 || n != 1) CHECK(std::fabs(grid.coeffs(m, n)) < 1e-10);
  }
  SUBCASE("T2 in x") {
    auto grid = cheb::fit_coeffs_2d(
        [](double x, double) { return 2 * x * x - 1; }, 3, 3, 8, 8);
    CHECK(grid.coeffs(2, 0) == doctest::Approx(1.0).epsilon(1e-10));
    for (int m = 0; m <= 3; ++m)
      for (int n = 0; n <= 3; ++n)
        if (m != 2 || n != 0) CHECK(std::fabs(grid.coeffs(m, n)) < 1e-10);
  }
}

TEST_CASE("fit_coeffs_2d validates node counts") {
  CHECK_THROWS_WITH_AS(cheb::fit_coeffs_2d([](double, double) { return 0.0; }, 4, 4, 3, 8),
                       doctest::Contains("need at least 5x5"), InvalidInputError);
  MatrixD samples(2, 2, 1.0);
  CHECK_THROWS_AS(cheb::fit_coeffs_2d(samples, 3, 3), InvalidInputError);
}

TEST_CASE("reconstruct_2d basics") {
  cheb::ChebCoeffGrid g;
  g.order_x = 2;
  g.order_y = 2;
  g.coeffs = MatrixD(3, 3, 0.0);
  g.coeffs(0, 0) = 1.0;
  const std::vector<double> pts = {-0.9, -0.3, 0.2, 0.8};
  MatrixD ones = cheb::reconstruct_2d(g, pts, pts);
  for (double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

  g.coeffs(0, 0) = 0.0;
  MatrixD zeros = cheb::reconstruct_2d(g, pts, pts);
  for (double v : zeros.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("fit then reconstruct round trips polynomial samples") {
  auto f = [](double x, double y) {
    return 0.3 + 0.7 * x - 1.1 * y + 0.25 * x * y + (2 * x * x - 1) * 0.4;
  };
  const int nodes = 12;
  auto grid = cheb::fit_coeffs_2d(f, 4, 4, nodes, nodes);
  const auto xs = cheb::cheb_gauss_nodes(nodes);
  MatrixD rec = cheb::reconstruct_2d(grid, xs, xs);
  for (std::size_t p = 0; p < xs.size(); ++p)
    for (std::size_t q = 0; q < xs.size(); ++q)
      CHECK(rec(p, q) == doctest::Approx(f(xs[p], xs[q])).epsilon(1e-9));
}

TEST_CASE("fit of reconstruction is a projection") {
  chebcnn::Rng rng(91);
  cheb::ChebCoeffGrid g;
  g.order_x = 5;
  g.order_y = 4;
  g.coeffs = MatrixD(6, 5);
  for (double& v : g.coeffs.data()) v = rng.uniform(-1.0, 1.0);

  const int nodes = 24;
  const auto xs = cheb::cheb_gauss_nodes(nodes);
  MatrixD samples = cheb::reconstruct_2d(g, xs, xs);
  auto refit = cheb::fit_coeffs_2d(samples, 5, 4);
  for (std::size_t m = 0; m < 6; ++m)
    for (std::size_t n = 0; n < 5; ++n)
      CHECK(refit.coeffs(m, n) == doctest::Approx(g.coeffs(m, n)).epsilon(1e-9));
}

TEST_CASE("DomainMap endpoints and monotonicity") {
  cheb::DomainMap map(2.0, 10.0);
  CHECK(map.to_unit(2.0) == doctest::Approx(-1.0));
  CHECK(map.to_unit(10.0) == doctest::Approx(1.0));
  CHECK(map.to_unit(6.0) == doctest::Approx(0.0));
  CHECK(map.from_unit(map.to_unit(3.7)) == doctest::Approx(3.7));
  CHECK(map.to_unit(5.0) < map.to_unit(5.1));
  CHECK_THROWS_AS(cheb::DomainMap(3.0, 3.0), InvalidInputError);
}
