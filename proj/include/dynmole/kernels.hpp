#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dynmole/losses.hpp"
#include "dynmole/mole.hpp"

namespace dynmole {

struct Sample {
  Vector x;
  Vector target;
  std::size_t cluster = 0;
};

/// Loss terms and parameter gradients of one minibatch.
///
/// total = mean task loss + auxiliary loss, and `grads` is the gradient of
/// `total`.
struct BatchResult {
  double task_loss = 0.0;
  double entropy_loss = 0.0;
  double balance_loss = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
  double mean_entropy_norm = 0.0;
  LayerGradients grads;
  BatchRoutingStats stats;
};

enum class Backend { Serial, OpenMP };

namespace kernels {

// The serial versions are the reference. The OpenMP versions parallelize
// over tokens and reduce per-token gradients in token order, so both
// produce bit-identical results for any thread count.

BatchResult batch_step_serial(const MoleLayer& layer, std::span<const Sample> data,
                              std::span<const std::size_t> indices, const LossConfig& loss);
BatchResult batch_step_omp(const MoleLayer& layer, std::span<const Sample> data,
                           std::span<const std::size_t> indices, const LossConfig& loss);

std::vector<RouterDecision> route_all_serial(const MoleLayer& layer, std::span<const Sample> data);
std::vector<RouterDecision> route_all_omp(const MoleLayer& layer, std::span<const Sample> data);

}  // namespace kernels

BatchResult batch_step(Backend backend, const MoleLayer& layer, std::span<const Sample> data,
                       std::span<const std::size_t> indices, const LossConfig& loss);
std::vector<RouterDecision> route_all(Backend backend, const MoleLayer& layer, std::span<const Sample> data);

/// Loss of a batch without gradients (used by finite-difference checks).
/// Also returns the routing decisions so callers can detect selection flips.
struct BatchLoss {
  double total_loss;
  std::vector<RouterDecision> decisions;
};
BatchLoss batch_loss(const MoleLayer& layer, std::span<const Sample> data, std::span<const std::size_t> indices,
                     const LossConfig& loss);

}  // namespace dynmole
