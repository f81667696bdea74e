#include "dynmole/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dynmole/config.hpp"

namespace dynmole::cli {

namespace fs = std::filesystem;

namespace {

ExperimentConfig resolve_config(const CommonOptions& opts) {
  std::vector<std::string> overrides = opts.overrides;
  if (opts.seed) {
    overrides.push_back("train.seed=" + std::to_string(*opts.seed));
    overrides.push_back("task.seed=" + std::to_string(*opts.seed));
  }
  if (opts.out_dir) {
    overrides.push_back("output.dir=" + nlohmann::json(*opts.out_dir).dump());
  } else if (const char* env = std::getenv(kOutDirEnv); env && *env) {
    overrides.push_back("output.dir=" + nlohmann::json(std::string(env)).dump());
  }
  if (opts.config_path) return load_experiment(*opts.config_path, overrides);
  return parse_experiment("{}", overrides);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

// Maps library exceptions onto stable exit codes.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const DomainError& e) {
    err << "domain error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<double> parse_reals(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || end != item.c_str() + item.size() || !std::isfinite(v)) {
      throw UsageError(what + ": cannot parse '" + item + "' as a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(what + ": no values");
  return out;
}

std::vector<AblationAxis> parse_axes(const std::vector<std::string>& specs) {
  std::vector<AblationAxis> axes;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("axis '" + s + "' is not NAME=v1,v2,...");
    axes.push_back({s.substr(0, eq), parse_reals(s.substr(eq + 1), "axis " + s.substr(0, eq))});
  }
  return axes;
}

std::vector<AblationAxis> load_grid_file(const std::string& path) {
  const auto text = read_text_file(path);
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<AblationAxis> axes;
    for (const auto& a : j.at("axes")) axes.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<double>>()});
    return axes;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::vector<std::size_t> spread_batch(std::size_t n, std::size_t batch) {
  std::vector<std::size_t> idx;
  batch = std::min(batch, n);
  for (std::size_t i = 0; i < batch; ++i) idx.push_back(i * n / batch);
  return idx;
}

}  // namespace

int cmd_train(const CommonOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = resolve_config(opts);
    RunResult result = run_experiment(cfg.run);
    ensure_dir(cfg.output.dir);
    const auto report_path = join_path(cfg.output.dir, cfg.output.report);
    write_text_file(report_path, report_to_json(result.report, cfg));
    write_text_file(join_path(cfg.output.dir, cfg.output.timing), timing_csv(result.report));
    const auto trace_path = join_path(cfg.output.dir, cfg.output.trace);
    write_text_file(trace_path, trace_to_csv(result.report.final_trace));
    if (result.report.diverged()) {
      err << "training diverged at step " << result.report.divergence->step << ": "
          << result.report.divergence->message << '\n';
      return static_cast<int>(kDiverged);
    }
    const auto& last = result.report.steps.back();
    out << "steps: " << result.report.steps.size() << '\n'
        << "final_loss: " << format_real(last.total_loss) << '\n'
        << "initial_mean_entropy: " << format_real(mean_entropy(result.report.initial_trace)) << '\n'
        << "final_mean_entropy: " << format_real(mean_entropy(result.report.final_trace)) << '\n'
        << "report: " << report_path << '\n'
        << "trace: " << trace_path << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_route(const RouteOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto values = parse_reals(opts.distribution, "distribution");
    double sum = 0.0;
    for (double v : values) {
      if (v < 0.0) throw UsageError("distribution entries must be nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw UsageError("distribution sums to " + format_real(sum) + ", not 1");
    for (double& v : values) v /= sum;
    RoutingConfig cfg{values.size(), opts.top_p, opts.keep_top_k, opts.threshold, opts.q};
    cfg.validate();
    const auto d = hybrid_route(ProbDist(std::move(values)), cfg);
    out << "strategy: " << to_string(d.strategy) << '\n'
        << "entropy_norm: " << format_real(d.entropy_norm) << '\n'
        << "selected: " << format_list(d.selected) << '\n'
        << "weights: ";
    for (std::size_t i = 0; i < d.weights.size(); ++i) out << (i ? "," : "") << format_real(d.weights[i]);
    out << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_ablate(const CommonOptions& opts, const std::vector<std::string>& axis_specs,
               const std::optional<std::string>& grid_file, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = resolve_config(opts);
    std::vector<AblationAxis> axes;
    if (grid_file) axes = load_grid_file(*grid_file);
    for (auto& a : parse_axes(axis_specs)) axes.push_back(std::move(a));
    const auto points = ablate(cfg.run, axes);

    std::string csv;
    for (const auto& a : axes) csv += a.name + ',';
    csv += "final_loss,final_mean_entropy,soft,top_p,top_k_fallback,diverged\n";
    for (const auto& p : points) {
      for (const auto& [name, value] : p.params) csv += format_real(value) + ',';
      const auto& r = p.report;
      if (r.diverged()) {
        csv += "nan,nan,nan,nan,nan,1\n";
        continue;
      }
      const auto mix = strategy_mix(r.final_trace);
      csv += format_real(r.steps.back().total_loss) + ',' + format_real(mean_entropy(r.final_trace)) + ',' +
             format_real(mix.soft) + ',' + format_real(mix.top_p) + ',' + format_real(mix.top_k_fallback) + ",0\n";
    }
    ensure_dir(cfg.output.dir);
    const auto path = join_path(cfg.output.dir, "ablation.csv");
    write_text_file(path, csv);
    out << "grid points: " << points.size() << '\n' << "summary: " << path << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_gradcheck(const CommonOptions& opts, std::ostream& out, std::ostream& err, const GradientTamper& tamper) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = resolve_config(opts);
    const Dataset data = generate_task(cfg.run.task);
    Rng rng(cfg.run.train.seed);
    const MoleLayer layer = init_layer(cfg.run.dims, cfg.run.train.routing, rng, data.pretrained);
    const auto batch = spread_batch(data.samples.size(), cfg.run.train.batch_size);
    const auto report = grad_check(layer, data.samples, batch, cfg.run.train.loss, 1e-6, tamper);
    out << "checked: " << report.checked << '\n'
        << "skipped: " << report.skipped.size() << '\n';
    for (const auto& s : report.skipped) out << "  skipped " << s << " (routing decision changed)\n";
    out << "max_rel_error: " << format_real(report.max_rel_error) << '\n'
        << "worst: " << report.worst.param << " analytic=" << format_real(report.worst.analytic)
        << " numeric=" << format_real(report.worst.numeric) << '\n';
    const bool pass = report.max_rel_error < 1e-4;
    out << (pass ? "PASS" : "FAIL") << '\n';
    return static_cast<int>(pass ? kOk : kCheckFailed);
  });
}

int cmd_export(const std::string& input, const std::string& format, const std::string& output, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&] {
    if (format != "csv" && format != "json") throw UsageError("format must be csv or json");
    const std::string text = read_text_file(input);
    const bool is_json = fs::path(input).extension() == ".json";
    std::string result;
    if (is_json && text.find("\"per_step\"") != std::string::npos) {
      if (format != "csv") throw UsageError("a train report can only be exported to csv");
      result = report_steps_csv(report_from_json(text));
    } else {
      const RoutingTrace trace = is_json ? trace_from_json(text) : trace_from_csv(text);
      result = format == "csv" ? trace_to_csv(trace) : trace_to_json(trace);
    }
    write_text_file(output, result);
    out << "wrote " << output << '\n';
    return static_cast<int>(kOk);
  });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Entropy-guided hybrid routing for mixture-of-LoRA-experts layers", "dynmole"};
  app.require_subcommand(1);

  CommonOptions common;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config (JSON)");
    sub->add_option("--set", common.overrides, "override section.key=value (repeatable)");
    sub->add_option("--seed", seed, "seed for training and task generation");
    sub->add_option("--out", out_dir, "output directory (overrides $DYNMOLE_OUT_DIR and output.dir)");
  };

  auto* train = app.add_subcommand("train", "train a layer on the synthetic task");
  add_common(train);

  RouteOptions route_opts;
  auto* route = app.add_subcommand("route", "route one probability vector with the hybrid router");
  route->add_option("distribution", route_opts.distribution, "comma separated probabilities")->required();
  route->add_option("--top-p", route_opts.top_p, "Top-p threshold");
  route->add_option("--keep-top-k", route_opts.keep_top_k, "minimum number of activated experts");
  route->add_option("--threshold", route_opts.threshold, "normalized entropy threshold for soft routing");
  route->add_option("--q", route_opts.q, "Tsallis entropic index");

  std::vector<std::string> axes;
  std::optional<std::string> grid_file;
  auto* abl = app.add_subcommand("ablate", "run a hyperparameter grid");
  add_common(abl);
  abl->add_option("--axis", axes, "NAME=v1,v2,... (repeatable; cartesian product)");
  abl->add_option("--grid", grid_file, "grid preset file");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  add_common(gc);

  std::string export_in, export_format = "csv", export_out;
  auto* exp = app.add_subcommand("export", "convert a trace or report between CSV and JSON");
  exp->add_option("--input", export_in, "trace (.csv/.json) or report (.json)")->required();
  exp->add_option("--format", export_format, "csv or json");
  exp->add_option("--output", export_out, "destination file")->required();

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.push_back("dynmole");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  auto finish_common = [&](CLI::App* sub) {
    if (sub->count("--seed")) common.seed = seed;
    if (sub->count("--out")) common.out_dir = out_dir;
  };
  if (train->parsed()) {
    finish_common(train);
    return cmd_train(common, out, err);
  }
  if (route->parsed()) return cmd_route(route_opts, out, err);
  if (abl->parsed()) {
    finish_common(abl);
    return cmd_ablate(common, axes, grid_file, out, err);
  }
  if (gc->parsed()) {
    finish_common(gc);
    return cmd_gradcheck(common, out, err);
  }
  return cmd_export(export_in, export_format, export_out, out, err);
}

}  // namespace dynmole::cli
