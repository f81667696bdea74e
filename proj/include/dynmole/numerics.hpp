#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dynmole/errors.hpp"

namespace dynmole {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Builds from row-major data; throws ShapeError when the size is wrong.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  /// Builds from nested rows, e.g. `Matrix::from_rows({{1, 2}, {3, 4}})`.
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool all_finite() const noexcept;
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a · x for a column vector x.
Vector matvec(const Matrix& a, std::span<const double> x);
/// x · a for a row vector x (used by the router: logits = x · W_g).
Vector vecmat(std::span<const double> x, const Matrix& a);
/// aᵀ · y.
Vector matvec_transposed(const Matrix& a, std::span<const double> y);
/// m += scale · u vᵀ.
void add_outer(Matrix& m, std::span<const double> u, std::span<const double> v, double scale = 1.0);

double dot(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v) noexcept;

/// Probability vector over N ≥ 1 outcomes: entries finite and nonnegative,
/// summing to 1 within 1e-9. Construction validates and throws DomainError.
class ProbDist {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// The trivial distribution over a single outcome.
  ProbDist() : p_{1.0} {}
  explicit ProbDist(Vector p);
  static ProbDist uniform(std::size_t n);
  static ProbDist one_hot(std::size_t n, std::size_t hot);

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> values() const noexcept { return p_; }
  const Vector& vector() const noexcept { return p_; }
  auto begin() const noexcept { return p_.begin(); }
  auto end() const noexcept { return p_.end(); }

  bool operator==(const ProbDist&) const = default;

 private:
  Vector p_;
};

/// Numerically safe softmax (max subtraction). Throws NumericError on
/// non-finite input.
ProbDist softmax(std::span<const double> z);

/// Central-difference gradient of `f` at `x`.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double eps);

/// Deterministic generator: SplitMix64-seeded xoshiro256**. Uniform and
/// normal draws are derived with fixed bit manipulations so sequences are
/// identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached second value).
  double normal() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Independent stream derived from this generator's seed and `stream`.
  Rng fork(std::uint64_t stream) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

}  // namespace dynmole
