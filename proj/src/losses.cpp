#include "dynmole/losses.hpp"

#include <cmath>
#include <string>

namespace dynmole {

void LossConfig::validate() const {
  if (!std::isfinite(beta)) throw ConfigError("loss.beta must be finite");
  if (!(std::isfinite(alpha) && alpha >= 0.0)) throw ConfigError("loss.alpha must be nonnegative");
  if (!(std::isfinite(entropic_index) && entropic_index > 0.0)) throw ConfigError("loss.entropic_index must be positive");
}

BatchRoutingStats BatchRoutingStats::from_decisions(std::vector<RouterDecision> decisions, std::vector<Vector> logits) {
  if (decisions.empty()) throw UsageError("batch routing stats need at least one token");
  if (!logits.empty() && logits.size() != decisions.size()) throw ShapeError("one logit vector per token required");
  const std::size_t n = decisions.front().raw_dist.size();
  BatchRoutingStats stats;
  stats.dispatch_fraction.assign(n, 0.0);
  stats.mean_prob.assign(n, 0.0);
  double activations = 0.0;
  for (const auto& d : decisions) {
    if (d.raw_dist.size() != n) throw ShapeError("tokens routed over different expert counts");
    for (std::size_t i : d.selected) stats.dispatch_fraction[i] += 1.0;
    activations += static_cast<double>(d.selected.size());
    for (std::size_t i = 0; i < n; ++i) stats.mean_prob[i] += d.raw_dist[i];
  }
  const double t = static_cast<double>(decisions.size());
  for (std::size_t i = 0; i < n; ++i) {
    stats.dispatch_fraction[i] /= activations;
    stats.mean_prob[i] /= t;
  }
  stats.decisions = std::move(decisions);
  stats.logits = std::move(logits);
  return stats;
}

double entropy_loss(const BatchRoutingStats& stats, const LossConfig& cfg) {
  if (cfg.beta == 0.0) return 0.0;
  const auto q = cfg.q();
  double sum = 0.0;
  for (const auto& d : stats.decisions) sum += tsallis_entropy(d.raw_dist, q);
  return cfg.beta * sum / static_cast<double>(stats.tokens());
}

double load_balance_loss(const BatchRoutingStats& stats, const LossConfig& cfg, std::size_t n) {
  if (n != stats.experts()) throw ShapeError("load_balance_loss: expert count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += stats.dispatch_fraction[i] * stats.mean_prob[i];
  return cfg.alpha * static_cast<double>(n) * s;
}

double auxiliary_loss(const BatchRoutingStats& stats, const LossConfig& cfg, std::size_t n) {
  return load_balance_loss(stats, cfg, n) + entropy_loss(stats, cfg);
}

TaskLoss task_loss(std::span<const double> y, std::span<const double> target) {
  if (y.size() != target.size()) {
    throw ShapeError("task_loss: prediction length " + std::to_string(y.size()) + " != target length " +
                     std::to_string(target.size()));
  }
  TaskLoss out{0.0, Vector(y.size())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.grad[i] = y[i] - target[i];
    out.value += 0.5 * out.grad[i] * out.grad[i];
  }
  return out;
}

std::vector<Vector> aux_loss_grads(const BatchRoutingStats& stats, const LossConfig& cfg, std::size_t n) {
  if (n != stats.experts()) throw ShapeError("aux_loss_grads: expert count mismatch");
  const double t = static_cast<double>(stats.tokens());
  const auto q = cfg.q();
  // ∂L_balance/∂G_{t,i} = alpha N f_i / T.
  Vector balance(n);
  for (std::size_t i = 0; i < n; ++i) balance[i] = cfg.alpha * static_cast<double>(n) * stats.dispatch_fraction[i] / t;

  std::vector<Vector> grads;
  grads.reserve(stats.tokens());
  for (const auto& d : stats.decisions) {
    const auto& g = d.raw_dist;
    Vector dz(n, 0.0);
    if (cfg.alpha != 0.0) {
      double g_dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) g_dot += g[i] * balance[i];
      for (std::size_t i = 0; i < n; ++i) dz[i] = g[i] * (balance[i] - g_dot);
    }
    if (cfg.beta != 0.0) {
      const Vector de = entropy_logit_grad(g, q);
      const double scale = cfg.beta / t;
      for (std::size_t i = 0; i < n; ++i) dz[i] += scale * de[i];
    }
    grads.push_back(std::move(dz));
  }
  return grads;
}

}  // namespace dynmole
