#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dynmole/routing.hpp"

namespace dynmole {

/// One routed token as recorded for post-hoc analysis.
struct TraceRecord {
  std::size_t token_id = 0;
  std::size_t layer_id = 0;
  double entropy_norm = 0.0;
  Strategy strategy = Strategy::Soft;
  std::vector<std::size_t> selected;
  Vector weights;  // full length N, zero outside `selected`
  std::size_t argmax_expert = 0;

  bool operator==(const TraceRecord&) const = default;
};

struct RoutingTrace {
  std::vector<TraceRecord> records;
  bool operator==(const RoutingTrace&) const = default;
};

TraceRecord make_record(const RouterDecision& d, std::size_t token_id, std::size_t layer_id = 0);
RoutingTrace make_trace(const std::vector<RouterDecision>& decisions, std::size_t layer_id = 0);

/// Mean number of activated experts, per layer.
std::map<std::size_t, double> avg_activated(const RoutingTrace& trace);

struct StrategyMix {
  double soft = 0.0;
  double top_p = 0.0;
  double top_k_fallback = 0.0;
};
StrategyMix strategy_mix(const RoutingTrace& trace);

double mean_entropy(const RoutingTrace& trace);

/// Fraction of tokens whose argmax expert equals the most common argmax
/// expert of their cluster. `clusters[i]` labels trace record i.
double cluster_consistency(const RoutingTrace& trace, const std::vector<std::size_t>& clusters);

struct RoundStat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

struct RoundStats {
  std::size_t round_length = 0;
  std::vector<RoundStat> full;
  std::optional<RoundStat> partial;  // trailing window shorter than round_length
};

RoundStats round_stats(const std::vector<double>& losses, std::size_t round_length);

// Trace files. CSV columns:
//   token_id,layer_id,entropy_norm,strategy,n_selected,argmax_expert,selected,weights
// `selected` and `weights` are semicolon-joined; reals use 17 significant
// digits so a re-read reproduces every value exactly.

std::string trace_to_csv(const RoutingTrace& trace);
RoutingTrace trace_from_csv(const std::string& text);
/// `config_json` is embedded verbatim under "config" (pass "null" for none).
std::string trace_to_json(const RoutingTrace& trace, const std::string& config_json = "null");
RoutingTrace trace_from_json(const std::string& text);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

/// Renders a double with 17 significant digits.
std::string format_real(double v);

}  // namespace dynmole
