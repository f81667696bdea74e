#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "dynmole/entropy.hpp"
#include "dynmole/numerics.hpp"

namespace dynmole {

enum class Strategy { Soft, TopP, TopKFallback };

std::string_view to_string(Strategy s) noexcept;
/// Parses the names produced by to_string; throws ConfigError otherwise.
Strategy parse_strategy(std::string_view name);

struct RoutingConfig {
  std::size_t n_experts = 6;
  double top_p = 0.75;
  std::size_t keep_top_k = 2;
  double entropy_threshold = 0.9;
  double entropic_index = 1.1;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  EntropicIndex q() const { return EntropicIndex(entropic_index); }

  // Routing rules of the compared methods, expressed as configurations of
  // the hybrid router.

  /// Entropy-dispatched hybrid routing with the published hyperparameters.
  static RoutingConfig hybrid(std::size_t n_experts = 6);
  /// Dense soft routing: every token with nonzero entropy takes all experts.
  static RoutingConfig soft_only(std::size_t n_experts = 6);
  /// Plain Top-k: soft branch disabled, Top-p collapsed to one expert so the
  /// Keep-Top-k floor always decides.
  static RoutingConfig top_k_only(std::size_t n_experts = 6, std::size_t k = 2);
  /// Plain Top-p: soft branch disabled and Keep-Top-k = 1.
  static RoutingConfig top_p_only(std::size_t n_experts = 6, double p = 0.75);

  bool operator==(const RoutingConfig&) const = default;
};

struct RankedExpert {
  std::size_t index;
  double prob;
  bool operator==(const RankedExpert&) const = default;
};

/// Experts sorted by probability, highest first; ties by ascending index.
std::vector<RankedExpert> sort_probs(const ProbDist& dist);

/// Indices (ascending) of the k most probable experts.
std::vector<std::size_t> top_k_select(const ProbDist& dist, std::size_t k);

/// Indices (ascending) of the shortest probability-sorted prefix whose
/// cumulative mass reaches p. For p = 1 every expert with nonzero mass.
std::vector<std::size_t> top_p_select(const ProbDist& dist, double p);

struct TopPkSelection {
  std::vector<std::size_t> selected;
  bool used_fallback = false;
};

/// Top-p when it activates at least k experts, otherwise Top-k.
TopPkSelection top_pk_select(const ProbDist& dist, double p, std::size_t k);

struct RouterDecision {
  Strategy strategy = Strategy::Soft;
  std::vector<std::size_t> selected;  // ascending
  ProbDist weights;                   // zero outside `selected`
  ProbDist raw_dist;
  double entropy_norm = 0.0;

  bool is_selected(std::size_t expert) const;
  /// argmax of raw_dist, lowest index on ties.
  std::size_t argmax_expert() const;
};

/// Soft routing when the normalized Tsallis entropy exceeds the threshold,
/// Top-(p,k) otherwise. Selected weights are renormalized to sum to 1.
RouterDecision hybrid_route(const ProbDist& dist, const RoutingConfig& cfg);

/// Restricts `dist` to `selected` and renormalizes.
ProbDist restrict_and_renormalize(const ProbDist& dist, const std::vector<std::size_t>& selected);

}  // namespace dynmole
