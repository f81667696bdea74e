#include <cmath>

#include <doctest.h>

#include "dynmole/errors.hpp"
#include "dynmole/numerics.hpp"
#include "oracles.hpp"

using namespace dynmole;

TEST_CASE("matmul") {
  const auto m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), m) == m);
  CHECK(matmul(m, Matrix::from_rows({{1}, {1}})) == Matrix::from_rows({{3}, {7}}));
  CHECK(matmul(Matrix(2, 2), m) == Matrix(2, 2));
  CHECK_THROWS_AS(matmul(m, Matrix(3, 1)), ShapeError);
}

TEST_CASE("matmul is associative on random matrices") {
  Rng rng(5);
  auto rnd = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.uniform(-1, 1);
    return m;
  };
  for (int t = 0; t < 50; ++t) {
    const std::size_t a = 1 + rng.below(5), b = 1 + rng.below(5), c = 1 + rng.below(5), d = 1 + rng.below(5);
    const auto x = rnd(a, b), y = rnd(b, c), z = rnd(c, d);
    const auto l = matmul(matmul(x, y), z), r = matmul(x, matmul(y, z));
    for (std::size_t i = 0; i < l.size(); ++i) CHECK(std::abs(l.data()[i] - r.data()[i]) <= 1e-9);
  }
}

TEST_CASE("matrix-vector helpers agree with matmul") {
  const auto m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(matvec(m, std::vector<double>{1, 0, -1}) == Vector{-2, -2});
  CHECK(vecmat(std::vector<double>{1, -1}, m) == Vector{-3, -3, -3});
  CHECK(matvec_transposed(m, std::vector<double>{1, -1}) == Vector{-3, -3, -3});
  Matrix acc(2, 3);
  add_outer(acc, std::vector<double>{1, 2}, std::vector<double>{1, 0, 1}, 2.0);
  CHECK(acc == Matrix::from_rows({{2, 0, 2}, {4, 0, 4}}));
  CHECK_THROWS_AS(matvec(m, std::vector<double>{1, 2}), ShapeError);
  CHECK(dot(std::vector<double>{1, 2}, std::vector<double>{3, 4}) == 11.0);
}

TEST_CASE("matrix rejects inconsistent data") {
  CHECK_THROWS_AS(Matrix(2, 2, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST_CASE("softmax") {
  const auto u = softmax(std::vector<double>{0, 0, 0, 0});
  for (double v : u) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  const auto two = softmax(std::vector<double>{1, 0});
  CHECK(two[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1)).epsilon(1e-14));
  CHECK(two[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(two[1] == doctest::Approx(0.2689).epsilon(1e-4));
  const auto big = softmax(std::vector<double>{1000, 0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  CHECK_THROWS_AS(softmax(std::vector<double>{0, NAN}), NumericError);
  CHECK_THROWS_AS(softmax(std::vector<double>{INFINITY, 0}), NumericError);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    const auto z = oracle::random_vector(rng, 1 + rng.below(16), 10.0);
    const auto p = softmax(z);
    double s = 0;
    for (double v : p) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
    auto shifted = z;
    const double c = rng.uniform(-50, 50);
    for (double& v : shifted) v += c;
    const auto ps = softmax(shifted);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(p[i] - ps[i]) <= 1e-12);
    const auto o = oracle::softmax(z);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(p[i] - o[i]) <= 1e-14);
  }
}

TEST_CASE("finite differences") {
  const auto sq = finite_diff_grad([](const Vector& x) { return x[0] * x[0]; }, {3.0}, 1e-5);
  CHECK(std::abs(sq[0] - 6.0) <= 1e-6);
  const auto c = finite_diff_grad([](const Vector&) { return 4.0; }, {1.0, 2.0}, 1e-5);
  CHECK(c == Vector{0.0, 0.0});
  const auto lin = finite_diff_grad([](const Vector& x) { return x[0] + x[1] + x[2]; }, {0.3, -7, 2}, 1e-4);
  for (double v : lin) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(finite_diff_grad([](const Vector&) { return 1.0; }, {1.0}, 0.0), DomainError);
  CHECK_THROWS_AS(finite_diff_grad([](const Vector& x) { return std::log(x[0]); }, {0.0}, 1e-3), NumericError);
}

TEST_CASE("ProbDist validation") {
  CHECK_NOTHROW(ProbDist({0.5, 0.5}));
  CHECK_THROWS_AS(ProbDist({0.5, 0.6}), DomainError);
  CHECK_THROWS_AS(ProbDist({1.5, -0.5}), DomainError);
  CHECK_THROWS_AS(ProbDist(Vector{}), DomainError);
  CHECK(ProbDist::one_hot(3, 2).vector() == Vector{0, 0, 1});
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
  Rng u(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(u.below(7) < 7);
  }
  CHECK(Rng(1).fork(1).next_u64() != Rng(1).fork(2).next_u64());
}

TEST_CASE("rng known first output") {
  // xoshiro256** seeded through splitmix64 from 0.
  Rng r(0);
  CHECK(r.next_u64() == 0x99ec5f36cb75f2b4ULL);
}
