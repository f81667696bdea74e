#include "dynmole/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dynmole {

EntropicIndex::EntropicIndex(double q) : q_(q) {
  if (!std::isfinite(q) || q <= 0.0) throw DomainError("entropic index must be positive, got " + std::to_string(q));
}

bool EntropicIndex::is_shannon() const noexcept { return std::abs(q_ - 1.0) <= kShannonTolerance; }

double shannon_entropy(const ProbDist& p) {
  double h = 0.0;
  for (double pi : p) {
    if (pi > 0.0) h -= pi * std::log(pi);
  }
  return std::max(h, 0.0);
}

double tsallis_entropy(const ProbDist& p, EntropicIndex q) {
  if (q.is_shannon()) return shannon_entropy(p);
  const double qm1 = q.value() - 1.0;
  double s = 0.0;
  for (double pi : p) {
    // 0^q = 0 for q > 0, so zero entries contribute p_i - p_i^q = 0.
    if (pi > 0.0) s -= pi * std::expm1(qm1 * std::log(pi));
  }
  return std::max(s / qm1, 0.0);
}

double tsallis_max(std::size_t n, EntropicIndex q) {
  if (n == 0) throw DomainError("tsallis_max: n must be at least 1");
  const double log_n = std::log(static_cast<double>(n));
  if (q.is_shannon()) return log_n;
  const double qm1 = q.value() - 1.0;
  return -std::expm1(-qm1 * log_n) / qm1;
}

double normalized_tsallis(const ProbDist& p, EntropicIndex q) {
  if (p.size() < 2) throw DomainError("normalized_tsallis: needs at least 2 outcomes");
  return std::clamp(tsallis_entropy(p, q) / tsallis_max(p.size(), q), 0.0, 1.0);
}

Vector tsallis_grad(const ProbDist& p, EntropicIndex q) {
  if (q.is_shannon()) throw DomainError("tsallis_grad: q = 1 has no closed form, use shannon_grad");
  const double qv = q.value();
  const double factor = -qv / (qv - 1.0);
  Vector g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = factor * std::pow(p[i], qv - 1.0);
  return g;
}

Vector shannon_grad(const ProbDist& p) {
  Vector g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) throw DomainError("shannon_grad: log diverges at p_" + std::to_string(i) + " = 0");
    g[i] = -(1.0 + std::log(p[i]));
  }
  return g;
}

Vector entropy_grad(const ProbDist& p, EntropicIndex q) {
  return q.is_shannon() ? shannon_grad(p) : tsallis_grad(p, q);
}

Vector entropy_logit_grad(const ProbDist& p, EntropicIndex q) {
  // Softmax Jacobian: dz_i = p_i (g_i - Σ_j p_j g_j).
  const std::size_t n = p.size();
  Vector dz(n, 0.0);
  if (q.is_shannon()) {
    // p_i g_i = -p_i (1 + log p_i); the constant 1 cancels, leaving
    // dz_i = -p_i (log p_i + H).
    const double h = shannon_entropy(p);
    for (std::size_t i = 0; i < n; ++i) {
      if (p[i] > 0.0) dz[i] = -p[i] * (std::log(p[i]) + h);
    }
    return dz;
  }
  // p_i g_i = -(q/(q-1)) p_i^q, so dz_i = -(q/(q-1)) (p_i^q - p_i Σ_j p_j^q).
  const double qv = q.value();
  const double factor = -qv / (qv - 1.0);
  Vector pq(n);
  double sum_pq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pq[i] = std::pow(p[i], qv);
    sum_pq += pq[i];
  }
  for (std::size_t i = 0; i < n; ++i) dz[i] = factor * (pq[i] - p[i] * sum_pq);
  return dz;
}

}  // namespace dynmole
