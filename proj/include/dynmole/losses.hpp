#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dynmole/entropy.hpp"
#include "dynmole/numerics.hpp"
#include "dynmole/routing.hpp"

namespace dynmole {

struct LossConfig {
  double beta = 1e-2;   // entropy-loss coefficient; negative subtracts entropy
  double alpha = 1e-2;  // load-balance coefficient
  double entropic_index = 1.1;

  void validate() const;
  EntropicIndex q() const { return EntropicIndex(entropic_index); }
  bool operator==(const LossConfig&) const = default;
};

/// Per-batch routing summary feeding the auxiliary losses.
///
/// f_i counts activations: a token contributes once to every expert it is
/// dispatched to, normalized by the total number of activations in the
/// batch. P_i is the batch mean of the full router distribution.
struct BatchRoutingStats {
  std::vector<RouterDecision> decisions;
  std::vector<Vector> logits;  // optional; required by aux_loss_grads
  Vector dispatch_fraction;    // f
  Vector mean_prob;            // P

  static BatchRoutingStats from_decisions(std::vector<RouterDecision> decisions, std::vector<Vector> logits = {});
  std::size_t tokens() const noexcept { return decisions.size(); }
  std::size_t experts() const noexcept { return mean_prob.size(); }
};

/// beta · mean over tokens of S_q(raw router distribution).
double entropy_loss(const BatchRoutingStats& stats, const LossConfig& cfg);

/// alpha · N · Σ_i f_i P_i.
double load_balance_loss(const BatchRoutingStats& stats, const LossConfig& cfg, std::size_t n);

double auxiliary_loss(const BatchRoutingStats& stats, const LossConfig& cfg, std::size_t n);

struct TaskLoss {
  double value;
  Vector grad;
};

/// ½‖y − y*‖² and its gradient y − y*.
TaskLoss task_loss(std::span<const double> y, std::span<const double> target);

/// Gradient of the auxiliary loss with respect to each token's router
/// logits. Dispatch fractions are piecewise constant in the logits and
/// contribute no gradient.
std::vector<Vector> aux_loss_grads(const BatchRoutingStats& stats, const LossConfig& cfg, std::size_t n);

}  // namespace dynmole
