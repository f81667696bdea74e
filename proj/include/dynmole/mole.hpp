#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynmole/numerics.hpp"
#include "dynmole/routing.hpp"

namespace dynmole {

struct LayerDims {
  std::size_t input_dim = 16;
  std::size_t output_dim = 8;
  std::size_t rank = 4;
  double lora_alpha = 8.0;

  void validate() const;
  double scaling() const { return lora_alpha / static_cast<double>(rank); }

  /// Desk-scale default: r = 4, alpha = 8.
  static LayerDims desk(std::size_t input_dim = 16, std::size_t output_dim = 8);
  /// Rank and alpha of the appendix hyperparameter table (r = 24, alpha = 48).
  static LayerDims table_preset(std::size_t input_dim, std::size_t output_dim);
  /// Rank quoted in the experimental setup text (r = 16), alpha kept at 2r.
  static LayerDims setup_text_preset(std::size_t input_dim, std::size_t output_dim);

  bool operator==(const LayerDims&) const = default;
};

struct LoraExpert {
  Matrix a;  // rank x input_dim
  Matrix b;  // output_dim x rank
  std::size_t rank = 0;
  double scaling = 1.0;

  bool operator==(const LoraExpert&) const = default;
};

struct Router {
  Matrix w_g;  // input_dim x n_experts
  bool operator==(const Router&) const = default;
};

/// One MoLE layer: frozen base weight plus N routed LoRA experts.
struct MoleLayer {
  Matrix w0;  // output_dim x input_dim, never updated
  Router router;
  std::vector<LoraExpert> experts;
  RoutingConfig cfg;
  std::uint64_t seed = 0;
  /// Identifies the layer for forward caches; copies share it.
  std::uint64_t id = 0;
  /// Bumped on every parameter update; a cache from an older revision is stale.
  std::uint64_t revision = 0;

  std::size_t input_dim() const noexcept { return w0.cols(); }
  std::size_t output_dim() const noexcept { return w0.rows(); }
  std::size_t n_experts() const noexcept { return experts.size(); }
  LayerDims dims() const;

  /// Throws ShapeError/ConfigError on inconsistent shapes or config.
  void validate() const;
  /// Number of trainable scalars (A, B and W_g).
  std::size_t trainable_count() const;
};

/// Gradients of the trainable parameters. W0 intentionally has no slot.
struct LayerGradients {
  std::vector<Matrix> d_a;
  std::vector<Matrix> d_b;
  Matrix d_wg;

  static LayerGradients zeros_like(const MoleLayer& layer);
  LayerGradients& operator+=(const LayerGradients& other);
  bool operator==(const LayerGradients&) const = default;
};

/// Process-unique identifier for a newly constructed layer.
std::uint64_t fresh_layer_id();

/// B = 0, A ~ U[-1/sqrt(k), 1/sqrt(k)], W_g = 0 (uniform router), and W0
/// either supplied (pretrained stand-in) or drawn at random from `rng`.
MoleLayer init_layer(const LayerDims& dims, const RoutingConfig& cfg, Rng& rng,
                     std::optional<Matrix> pretrained = std::nullopt);

/// scaling · B (A x).
Vector expert_forward(const LoraExpert& e, std::span<const double> x);

/// Router logits x · W_g.
Vector router_logits(const MoleLayer& layer, std::span<const double> x);

/// hybrid_route(softmax(x · W_g), cfg).
RouterDecision route(const MoleLayer& layer, std::span<const double> x);

struct ForwardCache {
  std::uint64_t layer_id = 0;
  std::uint64_t revision = 0;
  Vector x;
  Vector logits;
  RouterDecision decision;
  std::vector<Vector> hidden;      // A_i x for selected experts, empty otherwise
  std::vector<Vector> expert_out;  // E_i(x) for selected experts, empty otherwise
};

struct MoleForward {
  Vector y;
  ForwardCache cache;
  const RouterDecision& decision() const noexcept { return cache.decision; }
};

/// y = W0 x + Σ_{i selected} w_i E_i(x).
MoleForward mole_forward(const MoleLayer& layer, std::span<const double> x);

/// Same output with the gate weights supplied directly instead of routed.
/// Used to differentiate with respect to the gates themselves.
Vector mole_output_with_gates(const MoleLayer& layer, std::span<const double> x, std::span<const double> gates);

/// ∂L/∂w_i = dy · E_i(x) for every selected expert (zero elsewhere), where
/// w are the mixture weights actually applied.
Vector gate_gradient(const ForwardCache& cache, std::span<const double> dy);

/// Adds the gradients of one token to `acc`. `extra_dlogits`, when present,
/// is an additional loss gradient with respect to the router logits (the
/// auxiliary losses) that is folded into d_wg. The selection set is treated
/// as a constant. Throws UsageError on a stale cache.
void mole_backward_into(const MoleLayer& layer, const ForwardCache& cache, std::span<const double> dy,
                        std::span<const double> extra_dlogits, LayerGradients& acc);

/// Per-token backward split into two phases. The factors hold everything
/// the rank-1 parameter updates need; accumulate_gradients applies them as
///   d_b[i] += scale_i dy h_i^T,  d_a[i] += scale_i dh_i x^T,  d_wg += x dz^T
/// for the selected experts i, where h_i = A_i x and dh_i = B_i^T dy.
struct BackwardFactors {
  Vector dy;
  Vector scale;             // w_i * lora scaling, zero for unselected experts
  std::vector<Vector> dh;   // empty for unselected experts
  Vector dz;                // gradient with respect to the router logits
};
BackwardFactors backward_factors(const MoleLayer& layer, const ForwardCache& cache, std::span<const double> dy,
                                 std::span<const double> extra_dlogits = {});
void accumulate_gradients(const ForwardCache& cache, const BackwardFactors& f, LayerGradients& acc);

LayerGradients mole_backward(const MoleLayer& layer, const ForwardCache& cache, std::span<const double> dy,
                             std::span<const double> extra_dlogits = {});

/// Layer checkpoint as JSON. Doubles are written as shortest round-trip
/// decimals so load(save(layer)) is bit-identical.
std::string layer_to_json(const MoleLayer& layer);
MoleLayer layer_from_json(const std::string& text);
void save_layer(const MoleLayer& layer, const std::string& path);
MoleLayer load_layer(const std::string& path);

}  // namespace dynmole
