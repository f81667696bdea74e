#include "dynmole/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dynmole {

TraceRecord make_record(const RouterDecision& d, std::size_t token_id, std::size_t layer_id) {
  return {token_id, layer_id, d.entropy_norm, d.strategy, d.selected, d.weights.vector(), d.argmax_expert()};
}

RoutingTrace make_trace(const std::vector<RouterDecision>& decisions, std::size_t layer_id) {
  RoutingTrace trace;
  trace.records.reserve(decisions.size());
  for (std::size_t i = 0; i < decisions.size(); ++i) trace.records.push_back(make_record(decisions[i], i, layer_id));
  return trace;
}

namespace {

void require_nonempty(const RoutingTrace& trace, const char* what) {
  if (trace.records.empty()) throw UsageError(std::string(what) + ": empty trace");
}

}  // namespace

std::map<std::size_t, double> avg_activated(const RoutingTrace& trace) {
  require_nonempty(trace, "avg_activated");
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : trace.records) {
    auto& [sum, count] = acc[r.layer_id];
    sum += static_cast<double>(r.selected.size());
    ++count;
  }
  std::map<std::size_t, double> out;
  for (const auto& [layer, sc] : acc) out[layer] = sc.first / static_cast<double>(sc.second);
  return out;
}

StrategyMix strategy_mix(const RoutingTrace& trace) {
  require_nonempty(trace, "strategy_mix");
  std::size_t soft = 0, top_p = 0, fallback = 0;
  for (const auto& r : trace.records) {
    switch (r.strategy) {
      case Strategy::Soft:
        ++soft;
        break;
      case Strategy::TopP:
        ++top_p;
        break;
      case Strategy::TopKFallback:
        ++fallback;
        break;
    }
  }
  const double n = static_cast<double>(trace.records.size());
  return {static_cast<double>(soft) / n, static_cast<double>(top_p) / n, static_cast<double>(fallback) / n};
}

double mean_entropy(const RoutingTrace& trace) {
  require_nonempty(trace, "mean_entropy");
  double s = 0.0;
  for (const auto& r : trace.records) s += r.entropy_norm;
  return s / static_cast<double>(trace.records.size());
}

double cluster_consistency(const RoutingTrace& trace, const std::vector<std::size_t>& clusters) {
  require_nonempty(trace, "cluster_consistency");
  if (clusters.size() != trace.records.size()) throw ShapeError("cluster_consistency: one label per record required");
  std::map<std::size_t, std::map<std::size_t, std::size_t>> votes;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++votes[clusters[i]][trace.records[i].argmax_expert];
  std::size_t agreeing = 0;
  for (const auto& [cluster, counts] : votes) {
    std::size_t best = 0;
    for (const auto& [expert, c] : counts) best = std::max(best, c);
    agreeing += best;
  }
  return static_cast<double>(agreeing) / static_cast<double>(clusters.size());
}

namespace {

RoundStat window_stat(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  const double n = static_cast<double>(end - begin);
  double mean = 0.0;
  for (std::size_t i = begin; i < end; ++i) mean += v[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = begin; i < end; ++i) var += (v[i] - mean) * (v[i] - mean);
  return {mean, std::sqrt(var / n), end - begin};
}

}  // namespace

RoundStats round_stats(const std::vector<double>& losses, std::size_t round_length) {
  if (round_length < 1) throw UsageError("round_stats: round_length must be at least 1");
  if (losses.empty()) throw UsageError("round_stats: no losses");
  RoundStats out;
  out.round_length = round_length;
  const std::size_t full = losses.size() / round_length;
  for (std::size_t r = 0; r < full; ++r) out.full.push_back(window_stat(losses, r * round_length, (r + 1) * round_length));
  if (full * round_length < losses.size()) out.partial = window_stat(losses, full * round_length, losses.size());
  return out;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

constexpr const char* kTraceHeader =
    "token_id,layer_id,entropy_norm,strategy,n_selected,argmax_expert,selected,weights";

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ';';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_real(items[i]);
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::size_t parse_count(const std::string& s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("bad integer field '" + s + "'");
  return v;
}

double parse_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("bad real field '" + s + "'");
  return v;
}

}  // namespace

std::string trace_to_csv(const RoutingTrace& trace) {
  std::string out = kTraceHeader;
  out += '\n';
  for (const auto& r : trace.records) {
    out += std::to_string(r.token_id) + ',' + std::to_string(r.layer_id) + ',' + format_real(r.entropy_norm) + ',' +
           std::string(to_string(r.strategy)) + ',' + std::to_string(r.selected.size()) + ',' +
           std::to_string(r.argmax_expert) + ',' + join(r.selected) + ',' + join(r.weights) + '\n';
  }
  return out;
}

RoutingTrace trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw ConfigError("trace CSV: missing or unexpected header");
  RoutingTrace trace;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw ConfigError("trace CSV line " + std::to_string(line_no) + ": expected 8 fields");
    TraceRecord r;
    r.token_id = parse_count(f[0]);
    r.layer_id = parse_count(f[1]);
    r.entropy_norm = parse_real(f[2]);
    r.strategy = parse_strategy(f[3]);
    const std::size_t n_selected = parse_count(f[4]);
    r.argmax_expert = parse_count(f[5]);
    for (const auto& s : split(f[6], ';')) r.selected.push_back(parse_count(s));
    for (const auto& s : split(f[7], ';')) r.weights.push_back(parse_real(s));
    if (r.selected.size() != n_selected) {
      throw ConfigError("trace CSV line " + std::to_string(line_no) + ": n_selected disagrees with selected");
    }
    trace.records.push_back(std::move(r));
  }
  return trace;
}

std::string trace_to_json(const RoutingTrace& trace, const std::string& config_json) {
  using nlohmann::json;
  json records = json::array();
  for (const auto& r : trace.records) {
    records.push_back({{"token_id", r.token_id},
                       {"layer_id", r.layer_id},
                       {"entropy_norm", r.entropy_norm},
                       {"strategy", std::string(to_string(r.strategy))},
                       {"n_selected", r.selected.size()},
                       {"argmax_expert", r.argmax_expert},
                       {"selected", r.selected},
                       {"weights", r.weights}});
  }
  json j = {{"config", json::parse(config_json)}, {"records", std::move(records)}};
  return j.dump(1) + "\n";
}

RoutingTrace trace_from_json(const std::string& text) {
  using nlohmann::json;
  try {
    const json j = json::parse(text);
    RoutingTrace trace;
    for (const auto& r : j.at("records")) {
      TraceRecord rec;
      rec.token_id = r.at("token_id").get<std::size_t>();
      rec.layer_id = r.at("layer_id").get<std::size_t>();
      rec.entropy_norm = r.at("entropy_norm").get<double>();
      rec.strategy = parse_strategy(r.at("strategy").get<std::string>());
      rec.argmax_expert = r.at("argmax_expert").get<std::size_t>();
      rec.selected = r.at("selected").get<std::vector<std::size_t>>();
      rec.weights = r.at("weights").get<Vector>();
      trace.records.push_back(std::move(rec));
    }
    return trace;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("trace JSON: ") + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << contents;
  if (!out) throw IoError(path, "write failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace dynmole
