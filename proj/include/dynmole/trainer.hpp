#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dynmole/kernels.hpp"
#include "dynmole/losses.hpp"
#include "dynmole/metrics.hpp"
#include "dynmole/mole.hpp"
#include "dynmole/routing.hpp"

namespace dynmole {

/// Gaussian clusters of tokens, each cluster with its own hidden linear
/// target map. All maps share a common base (the "pretrained" weight) and
/// differ from it by a rank-kHiddenRank update, so a LoRA expert per cluster
/// can represent its cluster exactly.
struct SyntheticTaskSpec {
  static constexpr std::size_t kHiddenRank = 2;

  std::size_t n_clusters = 4;
  std::size_t input_dim = 16;
  std::size_t output_dim = 8;
  std::size_t samples_per_cluster = 128;
  double noise_std = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const SyntheticTaskSpec&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<Vector> centers;
  std::vector<Matrix> maps;  // target map per cluster
  Matrix pretrained;         // shared base of the maps

  std::vector<std::size_t> cluster_labels() const;
};

Dataset generate_task(const SyntheticTaskSpec& spec);

enum class Optimizer { Sgd, AdamW };
std::string_view to_string(Optimizer o) noexcept;
Optimizer parse_optimizer(std::string_view name);

struct TrainConfig {
  RoutingConfig routing = RoutingConfig::hybrid(4);
  LossConfig loss;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  std::size_t round_length = 320;
  Optimizer optimizer = Optimizer::Sgd;
  std::uint64_t seed = 1;
  Backend backend = Backend::OpenMP;

  void validate() const;
};

/// Fixed AdamW constants.
struct AdamWConstants {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;
  static constexpr double kWeightDecay = 0.0;
};

struct StepRecord {
  double total_loss = 0.0;
  double task_loss = 0.0;
  double aux_loss = 0.0;
  double mean_entropy = 0.0;  // mean normalized router entropy of the batch
  std::size_t soft = 0;
  std::size_t top_p = 0;
  std::size_t top_k_fallback = 0;
};

struct Divergence {
  std::size_t step = 0;
  std::string message;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  RoundStats rounds;
  RoutingTrace initial_trace;
  RoutingTrace final_trace;
  std::vector<double> step_seconds;  // wall clock, excluded from the report JSON
  std::optional<Divergence> divergence;

  bool diverged() const noexcept { return divergence.has_value(); }
  std::vector<double> total_losses() const;
};

/// Applies one optimizer step to the trainable parameters (never W0).
class ParameterUpdater {
 public:
  ParameterUpdater(const MoleLayer& layer, Optimizer optimizer, double learning_rate);
  void apply(MoleLayer& layer, const LayerGradients& grads);

 private:
  Optimizer optimizer_;
  double lr_;
  std::size_t t_ = 0;
  LayerGradients m_;
  LayerGradients v_;
};

/// Minibatches drawn from shuffled epochs of the dataset; the shuffle stream
/// is derived from the training seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch);

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

/// Runs `cfg.steps` minibatch updates. The layer's routing config is replaced
/// by cfg.routing. Stops early, with `divergence` set, on a non-finite loss.
TrainReport train(MoleLayer& layer, const Dataset& data, const TrainConfig& cfg);

/// Everything needed for one self-contained run.
struct RunSpec {
  SyntheticTaskSpec task;
  LayerDims dims;
  TrainConfig train;

  void validate() const;
};

struct RunResult {
  TrainReport report;
  MoleLayer layer;
  Dataset data;
};

/// Generates the task, builds a layer on top of its pretrained weight and
/// trains it.
RunResult run_experiment(const RunSpec& spec);

struct AblationAxis {
  std::string name;  // beta, alpha, q, threshold, p, k, lr
  std::vector<double> values;
};

struct AblationPoint {
  std::vector<std::pair<std::string, double>> params;
  RunSpec spec;
  TrainReport report;
};

/// Applies one named parameter to a spec. Throws ConfigError for unknown
/// names.
void apply_axis_value(RunSpec& spec, const std::string& name, double value);

/// Cartesian product of the axes (last axis varies fastest), one independent
/// run per point. Every point is validated before any run starts. Points run
/// in parallel; results come back in grid order.
std::vector<AblationPoint> ablate(const RunSpec& base, const std::vector<AblationAxis>& grid);

struct GradCheckEntry {
  std::string param;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::size_t checked = 0;
  std::vector<std::string> skipped;  // perturbation changed a routing decision
};

/// Relative error |a - n| / max(|a|, |n|, floor) with
/// floor = kGradCheckFloor * max(1, |loss|). A central difference of a loss L
/// carries rounding noise of a few ulp(L) / 2eps, so entries whose true
/// gradient is zero are compared against a floor that scales with L.
inline constexpr double kGradCheckFloor = 1e-4;
double grad_rel_error(double analytic, double numeric, double loss_value = 1.0);

using GradientTamper = std::function<void(LayerGradients&)>;

/// Compares every trainable gradient of the total batch loss against central
/// differences. Parameters whose ±eps perturbation changes any token's
/// strategy or selection set are skipped and listed.
GradCheckReport grad_check(const MoleLayer& layer, std::span<const Sample> data, std::span<const std::size_t> indices,
                           const LossConfig& loss, double eps, const GradientTamper& tamper = {});

}  // namespace dynmole
