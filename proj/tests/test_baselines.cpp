#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "libra/baselines.hpp"
#include "libra/error.hpp"
#include "support.hpp"

using namespace libra;

TEST_CASE("max pooling examples") {
  const Matrix one{{0.5, -2.0, 3.0}};
  CHECK(max_pool(one) == Vector{0.5, -2.0, 3.0});
  CHECK(max_pool(Matrix{{1, 0}, {0, 1}}) == Vector{1, 1});
  CHECK_THROWS_AS(max_pool(Matrix(0, 3)), InvalidArgument);
}

TEST_CASE("max pooling matches a column scan") {
  std::mt19937_64 rng(1);
  const Matrix x = test::random_matrix(5, 3, rng);
  const Vector m = max_pool(x);
  for (std::size_t t = 0; t < 3; ++t) {
    double best = -1e300;
    for (std::size_t j = 0; j < 5; ++j)
      if (x(j, t) > best) best = x(j, t);
    CHECK(m[t] == best);
  }
}

TEST_CASE("max pooling ignores instance order") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = test::random_matrix(1 + trial % 11, 6, rng);
    CHECK(max_pool(x) == max_pool(test::permute_rows(x, rng)));
  }
}

TEST_CASE("abmil with identical instances is uniform") {
  const AbmilParams p = AbmilParams::init(4, 5, 2, 3);
  Matrix x(6, 4);
  for (std::size_t j = 0; j < 6; ++j) {
    x(j, 0) = 0.3;
    x(j, 1) = -1.2;
    x(j, 3) = 2.0;
  }
  const AbmilOutput out = abmil_aggregate(x, p);
  for (double w : out.weights) CHECK(std::abs(w - 1.0 / 6.0) < 1e-15);
  CHECK(test::max_abs_diff(out.z.span(), x.row(0)) < 1e-15);
}

TEST_CASE("abmil over one instance returns it") {
  const AbmilParams p = AbmilParams::init(3, 4, 2, 5);
  const Matrix x{{0.1, 0.2, -0.7}};
  const AbmilOutput out = abmil_aggregate(x, p);
  CHECK(out.weights == Vector{1.0});
  CHECK(out.z == Vector{0.1, 0.2, -0.7});
}

TEST_CASE("abmil matches a straight-line oracle") {
  const AbmilParams p = AbmilParams::init(4, 5, 2, 11);
  std::mt19937_64 rng(3);
  const Matrix x = test::random_matrix(3, 4, rng);
  const AbmilOutput out = abmil_aggregate(x, p);
  std::vector<long double> e(3);
  long double total = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    long double s = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      long double pre = 0;
      for (std::size_t t = 0; t < 4; ++t) pre += (long double)p.v(k, t) * x(j, t);
      s += p.w[k] * std::tanh(pre);
    }
    e[j] = std::exp(s);
    total += e[j];
  }
  for (std::size_t t = 0; t < 4; ++t) {
    long double z = 0;
    for (std::size_t j = 0; j < 3; ++j) z += e[j] / total * x(j, t);
    CHECK(std::abs(out.z[t] - static_cast<double>(z)) <= 1e-12);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(out.weights[j] - static_cast<double>(e[j] / total)) <= 1e-12);
  }
}

TEST_CASE("abmil rejects mismatched widths") {
  const AbmilParams p = AbmilParams::init(4, 5, 2, 11);
  CHECK_THROWS_AS(abmil_aggregate(Matrix(3, 5), p), InvalidArgument);
  CHECK_THROWS_AS(abmil_aggregate(Matrix(0, 4), p), InvalidArgument);
}

TEST_CASE("abmil weights permute with the instances and z is invariant") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const AbmilParams p = AbmilParams::init(5, 6, 3, 1000 + trial);
    const std::size_t n = 1 + trial % 9;
    const Matrix x = test::random_matrix(n, 5, rng);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix px(n, 5);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), px.row(i).begin());
    }
    const AbmilOutput a = abmil_aggregate(x, p);
    const AbmilOutput b = abmil_aggregate(px, p);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(b.weights[i] - a.weights[perm[i]]) < 1e-15);
      CHECK(a.weights[i] > 0.0);
      CHECK(a.weights[i] <= 1.0);
      if (n > 1) CHECK(a.weights[i] < 1.0);
      s += a.weights[i];
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(test::max_abs_diff(a.z.span(), b.z.span()) < 1e-12);
  }
}

TEST_CASE("abmil_backward matches finite differences") {
  std::mt19937_64 rng(5);
  AbmilParams p = AbmilParams::init(4, 3, 2, 8);
  const Matrix x = test::random_matrix(5, 4, rng);
  const Vector up = test::random_vector(4, rng);
  AbmilParams grad = AbmilParams::zeros_like(p);
  abmil_backward(x, p, abmil_aggregate(x, p), up, grad);
  auto f = [&] { return dot(abmil_aggregate(x, p).z.span(), up.span()); };
  const double h = 1e-6;
  auto check = [&](std::span<double> target, std::span<const double> g) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double keep = target[i];
      target[i] = keep + h;
      const double fp = f();
      target[i] = keep - h;
      const double fm = f();
      target[i] = keep;
      CHECK(test::rel_err((fp - fm) / (2 * h), g[i], 1e-7) < 1e-6);
    }
  };
  check(p.v.span(), grad.v.span());
  check(p.w.span(), grad.w.span());
}
