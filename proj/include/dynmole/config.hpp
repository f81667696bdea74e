#pragma once

#include <string>
#include <vector>

#include "dynmole/trainer.hpp"

namespace dynmole {

struct OutputSettings {
  std::string dir = "out";
  std::string report = "report.json";
  std::string trace = "trace.csv";
  std::string timing = "timing.csv";
  bool operator==(const OutputSettings&) const = default;
};

/// Experiment file: sections routing, loss, train, task, lora, output.
///
/// Unknown sections or keys are rejected. Every key is optional and falls
/// back to the desk-scale default.
struct ExperimentConfig {
  RunSpec run;
  OutputSettings output;

  void validate() const { run.validate(); }
  /// Fully resolved configuration as JSON text.
  std::string to_json_text() const;
};

ExperimentConfig default_experiment();

/// Parses config text and applies `section.key=value` overrides (values are
/// JSON literals; anything unparsable is taken as a string). Validates the
/// result. Throws ConfigError.
ExperimentConfig parse_experiment(const std::string& json_text, const std::vector<std::string>& overrides = {});

/// Reads a config file; throws IoError naming the path when unreadable.
ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides = {});

/// Train report JSON: config echo, per-step arrays, per-round statistics,
/// routing summary and the names of the trace and timing files.
std::string report_to_json(const TrainReport& report, const ExperimentConfig& cfg);

/// Per-step records as CSV (header only for an empty report).
std::string report_steps_csv(const TrainReport& report);
/// Rebuilds the per-step records from a report JSON.
TrainReport report_from_json(const std::string& text);

/// Per-step wall clock seconds, one line per step.
std::string timing_csv(const TrainReport& report);

}  // namespace dynmole
