#include "dynmole/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dynmole {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.front().size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Matrix::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const noexcept { return dynmole::all_finite(data_); }

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw ShapeError("matvec: matrix cols " + std::to_string(a.cols()) +
                                             " != vector length " + std::to_string(x.size()));
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

Vector vecmat(std::span<const double> x, const Matrix& a) {
  if (a.rows() != x.size()) throw ShapeError("vecmat: vector length " + std::to_string(x.size()) +
                                             " != matrix rows " + std::to_string(a.rows()));
  Vector out(a.cols(), 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += x[k] * a(k, j);
  }
  return out;
}

Vector matvec_transposed(const Matrix& a, std::span<const double> y) { return vecmat(y, a); }

void add_outer(Matrix& m, std::span<const double> u, std::span<const double> v, double scale) {
  if (m.rows() != u.size() || m.cols() != v.size()) throw ShapeError("add_outer: shape mismatch");
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double su = scale * u[i];
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) += su * v[j];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ProbDist::ProbDist(Vector p) : p_(std::move(p)) {
  if (p_.empty()) throw DomainError("probability distribution over zero outcomes");
  double sum = 0.0;
  for (double v : p_) {
    if (!std::isfinite(v) || v < 0.0) throw DomainError("probability entry is negative or non-finite");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw DomainError("probabilities sum to " + std::to_string(sum) + ", not 1");
  }
}

ProbDist ProbDist::uniform(std::size_t n) {
  if (n == 0) throw DomainError("uniform distribution over zero outcomes");
  return ProbDist(Vector(n, 1.0 / static_cast<double>(n)));
}

ProbDist ProbDist::one_hot(std::size_t n, std::size_t hot) {
  if (hot >= n) throw DomainError("one_hot index out of range");
  Vector p(n, 0.0);
  p[hot] = 1.0;
  return ProbDist(std::move(p));
}

ProbDist softmax(std::span<const double> z) {
  if (z.empty()) throw ShapeError("softmax of empty vector");
  if (!all_finite(z)) throw NumericError("softmax: non-finite input");
  const double m = *std::max_element(z.begin(), z.end());
  Vector out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return ProbDist(std::move(out));
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_grad: eps must be positive");
  Vector grad(x.size());
  Vector probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() noexcept {
  // 1 - u lies in (0, 1], keeping the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  if (n == 0) return 0;
  // Rejection sampling for an unbiased result.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Rng Rng::fork(std::uint64_t stream) const noexcept {
  std::uint64_t sm = seed_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  return Rng(splitmix64(sm));
}

}  // namespace dynmole
