#include "dynmole/config.hpp"

#include <json.hpp>

namespace dynmole {

using nlohmann::json;

namespace {

json spec_to_json(const ExperimentConfig& c) {
  const auto& t = c.run.train;
  const auto& r = t.routing;
  const auto& l = t.loss;
  const auto& task = c.run.task;
  return {
      {"routing",
       {{"n_experts", r.n_experts},
        {"top_p", r.top_p},
        {"keep_top_k", r.keep_top_k},
        {"entropy_threshold", r.entropy_threshold},
        {"entropic_index", r.entropic_index}}},
      {"loss", {{"beta", l.beta}, {"alpha", l.alpha}, {"entropic_index", l.entropic_index}}},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"steps", t.steps},
        {"round_length", t.round_length},
        {"optimizer", std::string(to_string(t.optimizer))},
        {"seed", t.seed},
        {"backend", t.backend == Backend::OpenMP ? "openmp" : "serial"}}},
      {"task",
       {{"n_clusters", task.n_clusters},
        {"input_dim", task.input_dim},
        {"output_dim", task.output_dim},
        {"samples_per_cluster", task.samples_per_cluster},
        {"noise_std", task.noise_std},
        {"seed", task.seed}}},
      {"lora", {{"rank", c.run.dims.rank}, {"alpha", c.run.dims.lora_alpha}}},
      {"output",
       {{"dir", c.output.dir}, {"report", c.output.report}, {"trace", c.output.trace}, {"timing", c.output.timing}}},
  };
}

template <typename T>
T field(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + " has the wrong type");
  }
}

std::size_t count_field(const json& j, const char* section, const char* key) {
  const json& v = j.at(section).at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string(section) + "." + key + " must be a nonnegative integer");
  }
  return v.get<std::size_t>();
}

ExperimentConfig spec_from_json(const json& j) {
  ExperimentConfig c;
  auto& t = c.run.train;
  t.routing.n_experts = count_field(j, "routing", "n_experts");
  t.routing.top_p = field<double>(j, "routing", "top_p");
  t.routing.keep_top_k = count_field(j, "routing", "keep_top_k");
  t.routing.entropy_threshold = field<double>(j, "routing", "entropy_threshold");
  t.routing.entropic_index = field<double>(j, "routing", "entropic_index");
  t.loss.beta = field<double>(j, "loss", "beta");
  t.loss.alpha = field<double>(j, "loss", "alpha");
  t.loss.entropic_index = field<double>(j, "loss", "entropic_index");
  t.learning_rate = field<double>(j, "train", "learning_rate");
  t.batch_size = count_field(j, "train", "batch_size");
  t.steps = count_field(j, "train", "steps");
  t.round_length = count_field(j, "train", "round_length");
  t.optimizer = parse_optimizer(field<std::string>(j, "train", "optimizer"));
  t.seed = field<std::uint64_t>(j, "train", "seed");
  const auto backend = field<std::string>(j, "train", "backend");
  if (backend == "openmp") {
    t.backend = Backend::OpenMP;
  } else if (backend == "serial") {
    t.backend = Backend::Serial;
  } else {
    throw ConfigError("train.backend must be 'openmp' or 'serial'");
  }
  auto& task = c.run.task;
  task.n_clusters = count_field(j, "task", "n_clusters");
  task.input_dim = count_field(j, "task", "input_dim");
  task.output_dim = count_field(j, "task", "output_dim");
  task.samples_per_cluster = count_field(j, "task", "samples_per_cluster");
  task.noise_std = field<double>(j, "task", "noise_std");
  task.seed = field<std::uint64_t>(j, "task", "seed");
  c.run.dims = {task.input_dim, task.output_dim, count_field(j, "lora", "rank"), field<double>(j, "lora", "alpha")};
  c.output = {field<std::string>(j, "output", "dir"), field<std::string>(j, "output", "report"),
              field<std::string>(j, "output", "trace"), field<std::string>(j, "output", "timing")};
  return c;
}

void merge_checked(json& base, const json& user) {
  if (!user.is_object()) throw ConfigError("config root must be an object");
  for (const auto& [section, body] : user.items()) {
    if (!base.contains(section)) throw ConfigError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      if (!base[section].contains(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
      base[section][key] = value;
    }
  }
}

void apply_override(json& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string raw = assignment.substr(eq + 1);
  if (!base.contains(section) || !base[section].contains(key)) {
    throw ConfigError("override names unknown key '" + section + "." + key + "'");
  }
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  base[section][key] = value;
}

}  // namespace

std::string ExperimentConfig::to_json_text() const { return spec_to_json(*this).dump(1); }

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.run.task = SyntheticTaskSpec{};
  c.run.dims = LayerDims::desk(c.run.task.input_dim, c.run.task.output_dim);
  c.run.train = TrainConfig{};
  return c;
}

ExperimentConfig parse_experiment(const std::string& json_text, const std::vector<std::string>& overrides) {
  json user;
  try {
    user = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json merged = spec_to_json(default_experiment());
  merge_checked(merged, user);
  for (const auto& o : overrides) apply_override(merged, o);
  ExperimentConfig c = spec_from_json(merged);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides) {
  return parse_experiment(read_text_file(path), overrides);
}

namespace {

json round_json(const RoundStat& r) { return {{"mean", r.mean}, {"std", r.std}, {"count", r.count}}; }

}  // namespace

std::string report_to_json(const TrainReport& report, const ExperimentConfig& cfg) {
  json per_step = {{"total_loss", json::array()}, {"task_loss", json::array()},    {"aux_loss", json::array()},
                   {"mean_entropy", json::array()}, {"soft", json::array()},      {"top_p", json::array()},
                   {"top_k_fallback", json::array()}};
  for (const auto& s : report.steps) {
    per_step["total_loss"].push_back(s.total_loss);
    per_step["task_loss"].push_back(s.task_loss);
    per_step["aux_loss"].push_back(s.aux_loss);
    per_step["mean_entropy"].push_back(s.mean_entropy);
    per_step["soft"].push_back(s.soft);
    per_step["top_p"].push_back(s.top_p);
    per_step["top_k_fallback"].push_back(s.top_k_fallback);
  }
  json rounds = {{"round_length", report.rounds.round_length}, {"full", json::array()}, {"partial", nullptr}};
  for (const auto& r : report.rounds.full) rounds["full"].push_back(round_json(r));
  if (report.rounds.partial) rounds["partial"] = round_json(*report.rounds.partial);

  json summary = nullptr;
  if (!report.final_trace.records.empty()) {
    const auto mix = strategy_mix(report.final_trace);
    json activated = json::object();
    for (const auto& [layer, avg] : avg_activated(report.final_trace)) activated[std::to_string(layer)] = avg;
    summary = {{"initial_mean_entropy", mean_entropy(report.initial_trace)},
               {"final_mean_entropy", mean_entropy(report.final_trace)},
               {"final_strategy_mix", {{"soft", mix.soft}, {"top_p", mix.top_p}, {"top_k_fallback", mix.top_k_fallback}}},
               {"avg_activated", std::move(activated)}};
  }
  json divergence = nullptr;
  if (report.divergence) divergence = {{"step", report.divergence->step}, {"message", report.divergence->message}};

  json j = {{"schema", "dynmole-train-report/1"},
            {"config", spec_to_json(cfg)},
            {"seed", cfg.run.train.seed},
            {"steps_completed", report.steps.size()},
            {"diverged", report.diverged()},
            {"divergence", std::move(divergence)},
            {"per_step", std::move(per_step)},
            {"rounds", std::move(rounds)},
            {"summary", std::move(summary)},
            {"trace_file", cfg.output.trace},
            {"timing_file", cfg.output.timing}};
  return j.dump(1) + "\n";
}

std::string report_steps_csv(const TrainReport& report) {
  std::string out = "step,total_loss,task_loss,aux_loss,mean_entropy,soft,top_p,top_k_fallback\n";
  for (std::size_t i = 0; i < report.steps.size(); ++i) {
    const auto& s = report.steps[i];
    out += std::to_string(i) + ',' + format_real(s.total_loss) + ',' + format_real(s.task_loss) + ',' +
           format_real(s.aux_loss) + ',' + format_real(s.mean_entropy) + ',' + std::to_string(s.soft) + ',' +
           std::to_string(s.top_p) + ',' + std::to_string(s.top_k_fallback) + '\n';
  }
  return out;
}

TrainReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const json& ps = j.at("per_step");
    TrainReport report;
    const std::size_t n = ps.at("total_loss").size();
    for (std::size_t i = 0; i < n; ++i) {
      report.steps.push_back({ps.at("total_loss")[i].get<double>(), ps.at("task_loss")[i].get<double>(),
                              ps.at("aux_loss")[i].get<double>(), ps.at("mean_entropy")[i].get<double>(),
                              ps.at("soft")[i].get<std::size_t>(), ps.at("top_p")[i].get<std::size_t>(),
                              ps.at("top_k_fallback")[i].get<std::size_t>()});
    }
    report.rounds.round_length = j.at("rounds").at("round_length").get<std::size_t>();
    if (!report.steps.empty()) report.rounds = round_stats(report.total_losses(), report.rounds.round_length);
    if (j.at("diverged").get<bool>()) {
      report.divergence = Divergence{j.at("divergence").at("step").get<std::size_t>(),
                                     j.at("divergence").at("message").get<std::string>()};
    }
    return report;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("report JSON: ") + e.what());
  }
}

std::string timing_csv(const TrainReport& report) {
  std::string out = "step,seconds\n";
  for (std::size_t i = 0; i < report.step_seconds.size(); ++i) {
    out += std::to_string(i) + ',' + format_real(report.step_seconds[i]) + '\n';
  }
  return out;
}

}  // namespace dynmole
