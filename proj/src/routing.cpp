#include "dynmole/routing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dynmole {

std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::Soft:
      return "soft";
    case Strategy::TopP:
      return "top_p";
    case Strategy::TopKFallback:
      return "top_k_fallback";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "soft") return Strategy::Soft;
  if (name == "top_p") return Strategy::TopP;
  if (name == "top_k_fallback") return Strategy::TopKFallback;
  throw ConfigError("unknown routing strategy '" + std::string(name) + "'");
}

void RoutingConfig::validate() const {
  if (n_experts < 1) throw ConfigError("routing.n_experts must be at least 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("routing.top_p must lie in (0, 1], got " + std::to_string(top_p));
  if (keep_top_k < 1 || keep_top_k > n_experts) {
    throw ConfigError("routing.keep_top_k must lie in [1, n_experts], got " + std::to_string(keep_top_k));
  }
  if (!(entropy_threshold >= 0.0 && entropy_threshold <= 1.0)) {
    throw ConfigError("routing.entropy_threshold must lie in [0, 1], got " + std::to_string(entropy_threshold));
  }
  if (!(std::isfinite(entropic_index) && entropic_index > 0.0)) {
    throw ConfigError("routing.entropic_index must be positive, got " + std::to_string(entropic_index));
  }
}

RoutingConfig RoutingConfig::hybrid(std::size_t n_experts) {
  return {.n_experts = n_experts, .top_p = 0.75, .keep_top_k = 2, .entropy_threshold = 0.9, .entropic_index = 1.1};
}

RoutingConfig RoutingConfig::soft_only(std::size_t n_experts) {
  return {.n_experts = n_experts, .top_p = 1.0, .keep_top_k = 1, .entropy_threshold = 0.0, .entropic_index = 1.1};
}

RoutingConfig RoutingConfig::top_k_only(std::size_t n_experts, std::size_t k) {
  return {.n_experts = n_experts,
          .top_p = 1e-12,
          .keep_top_k = k,
          .entropy_threshold = 1.0,
          .entropic_index = 1.1};
}

RoutingConfig RoutingConfig::top_p_only(std::size_t n_experts, double p) {
  return {.n_experts = n_experts, .top_p = p, .keep_top_k = 1, .entropy_threshold = 1.0, .entropic_index = 1.1};
}

std::vector<RankedExpert> sort_probs(const ProbDist& dist) {
  std::vector<RankedExpert> ranked(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) ranked[i] = {i, dist[i]};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedExpert& a, const RankedExpert& b) { return a.prob > b.prob; });
  return ranked;
}

namespace {

std::vector<std::size_t> prefix_indices(const std::vector<RankedExpert>& ranked, std::size_t len) {
  std::vector<std::size_t> out;
  out.reserve(len);
  for (std::size_t i = 0; i < len; ++i) out.push_back(ranked[i].index);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<std::size_t> top_k_select(const ProbDist& dist, std::size_t k) {
  if (k < 1 || k > dist.size()) {
    throw ConfigError("top_k_select: k = " + std::to_string(k) + " outside [1, " + std::to_string(dist.size()) + "]");
  }
  return prefix_indices(sort_probs(dist), k);
}

std::vector<std::size_t> top_p_select(const ProbDist& dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top_p_select: p must lie in (0, 1]");
  const auto ranked = sort_probs(dist);
  std::size_t nonzero = 0;
  while (nonzero < ranked.size() && ranked[nonzero].prob > 0.0) ++nonzero;
  // Rounding can leave the full cumulative sum a few ulps short of 1, so the
  // saturated case is decided by the support rather than by the sum.
  if (p >= 1.0) return prefix_indices(ranked, nonzero);
  double cumulative = 0.0;
  for (std::size_t len = 1; len <= nonzero; ++len) {
    cumulative += ranked[len - 1].prob;
    if (cumulative >= p) return prefix_indices(ranked, len);
  }
  return prefix_indices(ranked, nonzero);
}

TopPkSelection top_pk_select(const ProbDist& dist, double p, std::size_t k) {
  auto nucleus = top_p_select(dist, p);
  if (nucleus.size() >= k) return {std::move(nucleus), false};
  return {top_k_select(dist, k), true};
}

bool RouterDecision::is_selected(std::size_t expert) const {
  return std::binary_search(selected.begin(), selected.end(), expert);
}

std::size_t RouterDecision::argmax_expert() const {
  return static_cast<std::size_t>(std::max_element(raw_dist.begin(), raw_dist.end()) - raw_dist.begin());
}

ProbDist restrict_and_renormalize(const ProbDist& dist, const std::vector<std::size_t>& selected) {
  double mass = 0.0;
  for (std::size_t i : selected) mass += dist[i];
  Vector w(dist.size(), 0.0);
  if (mass > 0.0) {
    for (std::size_t i : selected) w[i] = dist[i] / mass;
  } else {
    // Only reachable when Keep-Top-k pulls in experts with zero mass.
    for (std::size_t i : selected) w[i] = 1.0 / static_cast<double>(selected.size());
  }
  return ProbDist(std::move(w));
}

RouterDecision hybrid_route(const ProbDist& dist, const RoutingConfig& cfg) {
  cfg.validate();
  if (dist.size() != cfg.n_experts) {
    throw ShapeError("hybrid_route: distribution over " + std::to_string(dist.size()) + " experts, config expects " +
                     std::to_string(cfg.n_experts));
  }
  if (dist.size() < 2) throw DomainError("hybrid_route: needs at least 2 experts");
  const double e = normalized_tsallis(dist, cfg.q());
  if (e > cfg.entropy_threshold) {
    std::vector<std::size_t> all(dist.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return {Strategy::Soft, std::move(all), dist, dist, e};
  }
  auto sel = top_pk_select(dist, cfg.top_p, cfg.keep_top_k);
  auto weights = restrict_and_renormalize(dist, sel.selected);
  return {sel.used_fallback ? Strategy::TopKFallback : Strategy::TopP, std::move(sel.selected), std::move(weights), dist, e};
}

}  // namespace dynmole
