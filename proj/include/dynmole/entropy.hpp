#pragma once

#include <cstddef>

#include "dynmole/numerics.hpp"

namespace dynmole {

/// Tsallis entropic index q > 0. Values within kShannonTolerance of 1 select
/// the Shannon limit.
class EntropicIndex {
 public:
  static constexpr double kShannonTolerance = 1e-9;

  explicit EntropicIndex(double q);
  double value() const noexcept { return q_; }
  bool is_shannon() const noexcept;

  bool operator==(const EntropicIndex&) const = default;

 private:
  double q_;
};

/// H(p) = -Σ p_i log p_i in nats, with 0·log 0 = 0.
double shannon_entropy(const ProbDist& p);

/// S_q(p) = (1 - Σ p_i^q) / (q - 1). Falls back to Shannon near q = 1.
///
/// Evaluated as -Σ p_i · expm1((q - 1) log p_i) / (q - 1), which is the same
/// quantity without the cancellation in 1 - Σ p_i^q as q approaches 1.
double tsallis_entropy(const ProbDist& p, EntropicIndex q);

/// Entropy of the uniform distribution over n outcomes (the maximum of S_q).
double tsallis_max(std::size_t n, EntropicIndex q);

/// S_q(p) / tsallis_max(N, q), clamped to [0, 1]. Requires N ≥ 2.
double normalized_tsallis(const ProbDist& p, EntropicIndex q);

/// ∂S_q/∂p_i = -(q / (q - 1)) · p_i^(q-1). Requires q ≠ 1.
Vector tsallis_grad(const ProbDist& p, EntropicIndex q);

/// ∂H/∂p_i = -(1 + log p_i). Throws DomainError if any p_i == 0.
Vector shannon_grad(const ProbDist& p);

/// tsallis_grad or shannon_grad depending on q.
Vector entropy_grad(const ProbDist& p, EntropicIndex q);

/// Gradient of S_q(softmax(z)) with respect to the logits z, given
/// p = softmax(z). Written in product form so it stays finite when some
/// p_i underflow to zero.
Vector entropy_logit_grad(const ProbDist& p, EntropicIndex q);

}  // namespace dynmole
