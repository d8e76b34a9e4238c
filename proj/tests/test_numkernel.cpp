#include <cmath>
#include <random>

#include "doctest.h"
#include "libra/error.hpp"
#include "libra/numkernel.hpp"
#include "support.hpp"

using namespace libra;

TEST_CASE("softmax of equal inputs is uniform") {
  const Vector y = softmax(Vector{2.0, 2.0, 2.0}.span());
  for (double p : y) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax of a single element is one") {
  CHECK(softmax(Vector{5.0}.span())[0] == 1.0);
}

TEST_CASE("softmax of (0, 1) against long double evaluation") {
  const long double e0 = std::exp(0.0L);
  const long double e1 = std::exp(1.0L);
  const Vector y = softmax(Vector{0.0, 1.0}.span());
  CHECK(std::abs(y[0] - static_cast<double>(e0 / (e0 + e1))) < 1e-15);
  CHECK(std::abs(y[1] - static_cast<double>(e1 / (e0 + e1))) < 1e-15);
  CHECK(std::abs(y[0] - 0.268941) < 1e-6);
  CHECK(std::abs(y[1] - 0.731059) < 1e-6);
}

TEST_CASE("softmax rejects empty input") {
  CHECK_THROWS_AS(softmax(std::span<const double>{}), InvalidArgument);
}

TEST_CASE("softmax stays on the simplex for large inputs") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector x = test::random_vector(1 + trial % 17, rng, -700.0, 700.0);
    const Vector y = softmax(x.span());
    double s = 0.0;
    for (double p : y) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      s += p;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax_backward matches finite differences") {
  std::mt19937_64 rng(3);
  const Vector x = test::random_vector(5, rng, -2.0, 2.0);
  const Vector dy = test::random_vector(5, rng);
  const Vector y = softmax(x.span());
  const Vector dx = softmax_backward(y.span(), dy.span());
  for (std::size_t i = 0; i < 5; ++i) {
    Vector xp = x, xm = x;
    xp[i] += 1e-6;
    xm[i] -= 1e-6;
    const double fd = (dot(softmax(xp.span()).span(), dy.span()) -
                       dot(softmax(xm.span()).span(), dy.span())) / 2e-6;
    CHECK(std::abs(fd - dx[i]) < 1e-8);
  }
}

TEST_CASE("cosine closed forms") {
  CHECK(cosine(Vector{1, 0}.span(), Vector{0, 1}.span()) == 0.0);
  CHECK(cosine(Vector{3, 4}.span(), Vector{3, 4}.span()) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(cosine(Vector{1, 0}.span(), Vector{1, 1}.span()) - 0.7071067) < 1e-6);
}

TEST_CASE("cosine of a zero vector is zero") {
  CHECK(cosine(Vector{0, 0}.span(), Vector{1, 2}.span()) == 0.0);
  CHECK(cosine(Vector{1e-14, 0}.span(), Vector{1, 2}.span()) == 0.0);
}

TEST_CASE("cosine rejects length mismatch") {
  CHECK_THROWS_AS(cosine(Vector{1, 0}.span(), Vector{1, 0, 0}.span()), InvalidArgument);
}

TEST_CASE("cosine is symmetric and scale invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector a = test::random_vector(6, rng);
    const Vector b = test::random_vector(6, rng);
    const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
    Vector ca = a;
    for (auto& x : ca) x *= c;
    const double ab = cosine(a.span(), b.span());
    CHECK(ab == cosine(b.span(), a.span()));
    CHECK(std::abs(cosine(ca.span(), b.span()) - ab) < 1e-12);
    CHECK(ab >= -1.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("matmul identity, annihilation and a hand-expanded product") {
  const Matrix b{{1, 2}, {3, 4}};
  CHECK(matmul(Matrix::identity(2), b) == b);
  CHECK(matmul(Matrix(3, 2, 0.0), b) == Matrix(3, 2, 0.0));
  CHECK(matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}}) == Matrix{{17}, {39}});
}

TEST_CASE("matmul rejects inner dimension mismatch") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), InvalidArgument);
}

TEST_CASE("matmul is associative on random chains") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = test::random_matrix(4, 5, rng);
    const Matrix b = test::random_matrix(5, 3, rng);
    const Matrix c = test::random_matrix(3, 6, rng);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      CHECK(test::rel_err(left.span()[i], right.span()[i], 1e-12) <= 1e-9);
    }
  }
}

TEST_CASE("transposed products agree with explicit transposes") {
  std::mt19937_64 rng(9);
  const Matrix a = test::random_matrix(4, 3, rng);
  const Matrix b = test::random_matrix(4, 5, rng);
  const Matrix c = test::random_matrix(6, 3, rng);
  CHECK(test::max_abs_diff(matmul_tn(a, b).span(), matmul(transpose(a), b).span()) < 1e-14);
  CHECK(test::max_abs_diff(matmul_nt(a, c).span(), matmul(a, transpose(c)).span()) < 1e-14);
}

TEST_CASE("reductions") {
  const Matrix m{{1, 2, 3}, {4, 5, 6}};
  CHECK(column_mean(m) == Vector{2.5, 3.5, 4.5});
  CHECK(row_sums(m) == Vector{6, 15});
  CHECK(column_sums(m) == Vector{5, 7, 9});
  CHECK_THROWS_AS(column_mean(Matrix(0, 3)), InvalidArgument);
}

TEST_CASE("matrix construction validates data length") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), InvalidArgument);
  CHECK_THROWS_AS((Matrix{{1, 2}, {3}}), InvalidArgument);
}
