#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dynmole/trainer.hpp"

namespace dynmole::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kDiverged = 3 };

/// Environment variable that overrides the output directory (below --out).
inline constexpr const char* kOutDirEnv = "DYNMOLE_OUT_DIR";

struct CommonOptions {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

int cmd_train(const CommonOptions& opts, std::ostream& out, std::ostream& err);

struct RouteOptions {
  std::string distribution;  // comma separated
  double top_p = 0.75;
  std::size_t keep_top_k = 2;
  double threshold = 0.9;
  double q = 1.1;
};
int cmd_route(const RouteOptions& opts, std::ostream& out, std::ostream& err);

int cmd_ablate(const CommonOptions& opts, const std::vector<std::string>& axes, const std::optional<std::string>& grid_file,
               std::ostream& out, std::ostream& err);

/// `tamper` corrupts the analytic gradients before comparison; it exists for
/// negative-control tests.
int cmd_gradcheck(const CommonOptions& opts, std::ostream& out, std::ostream& err, const GradientTamper& tamper = {});

int cmd_export(const std::string& input, const std::string& format, const std::string& output, std::ostream& out,
               std::ostream& err);

/// Parses `args` (without the program name) and dispatches.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dynmole::cli
