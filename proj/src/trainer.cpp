#include "dynmole/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "omp_util.hpp"

namespace dynmole {

void SyntheticTaskSpec::validate() const {
  if (n_clusters < 2) throw ConfigError("task.n_clusters must be at least 2");
  if (input_dim == 0 || output_dim == 0) throw ConfigError("task dimensions must be positive");
  if (input_dim < kHiddenRank || output_dim < kHiddenRank) throw ConfigError("task dimensions below hidden map rank");
  if (samples_per_cluster == 0) throw ConfigError("task.samples_per_cluster must be positive");
  if (!(std::isfinite(noise_std) && noise_std >= 0.0)) throw ConfigError("task.noise_std must be nonnegative");
}

std::vector<std::size_t> Dataset::cluster_labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.cluster);
  return out;
}

namespace {

constexpr double kCenterRadius = 3.0;

double distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double min_pairwise_distance(const std::vector<Vector>& centers) {
  double best = INFINITY;
  for (std::size_t i = 0; i < centers.size(); ++i)
    for (std::size_t j = i + 1; j < centers.size(); ++j) best = std::min(best, distance(centers[i], centers[j]));
  return best;
}

}  // namespace

Dataset generate_task(const SyntheticTaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t k = spec.input_dim;
  const std::size_t d = spec.output_dim;
  const std::size_t h = SyntheticTaskSpec::kHiddenRank;

  Dataset data;
  data.pretrained = Matrix(d, k);
  for (double& v : data.pretrained.data()) v = rng.normal() / std::sqrt(static_cast<double>(k));

  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    Vector center(k);
    double norm = 0.0;
    for (double& v : center) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : center) v *= kCenterRadius / norm;
    data.centers.push_back(std::move(center));
  }
  // Separation guarantee: pairwise center distance of at least 4 noise_std.
  const double required = 4.0 * spec.noise_std;
  const double closest = min_pairwise_distance(data.centers);
  if (closest < required) {
    for (auto& c : data.centers)
      for (double& v : c) v *= required / closest;
  }
  if (!(min_pairwise_distance(data.centers) >= required * (1.0 - 1e-12))) {
    throw NumericError("generate_task: cluster centers closer than 4 noise_std");
  }

  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    Matrix u(d, h), v(h, k);
    for (double& x : u.data()) x = rng.normal() / std::sqrt(static_cast<double>(h));
    for (double& x : v.data()) x = rng.normal() / std::sqrt(static_cast<double>(k));
    Matrix map = matmul(u, v);
    for (std::size_t i = 0; i < map.size(); ++i) map.data()[i] += data.pretrained.data()[i];
    data.maps.push_back(std::move(map));
  }

  data.samples.reserve(spec.n_clusters * spec.samples_per_cluster);
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_cluster; ++s) {
      Sample sample;
      sample.cluster = c;
      sample.x = data.centers[c];
      for (double& x : sample.x) x += spec.noise_std * rng.normal();
      sample.target = matvec(data.maps[c], sample.x);
      for (double& y : sample.target) y += spec.noise_std * rng.normal();
      data.samples.push_back(std::move(sample));
    }
  }
  return data;
}

std::string_view to_string(Optimizer o) noexcept { return o == Optimizer::Sgd ? "sgd" : "adamw"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adamw") return Optimizer::AdamW;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adamw)");
}

void TrainConfig::validate() const {
  routing.validate();
  loss.validate();
  if (!(std::isfinite(learning_rate) && learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (steps < 1) throw ConfigError("train.steps must be positive");
  if (round_length < 1) throw ConfigError("train.round_length must be positive");
}

std::vector<double> TrainReport::total_losses() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.total_loss);
  return out;
}

ParameterUpdater::ParameterUpdater(const MoleLayer& layer, Optimizer optimizer, double learning_rate)
    : optimizer_(optimizer), lr_(learning_rate) {
  if (optimizer_ == Optimizer::AdamW) {
    m_ = LayerGradients::zeros_like(layer);
    v_ = LayerGradients::zeros_like(layer);
  }
}

void ParameterUpdater::apply(MoleLayer& layer, const LayerGradients& grads) {
  ++t_;
  auto sgd = [this](Matrix& p, const Matrix& g) {
    auto pd = p.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < pd.size(); ++i) pd[i] -= lr_ * gd[i];
  };
  using C = AdamWConstants;
  const double bc1 = 1.0 - std::pow(C::kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(C::kBeta2, static_cast<double>(t_));
  auto adamw = [&](Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
    auto pd = p.data();
    auto gd = g.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = C::kBeta1 * md[i] + (1.0 - C::kBeta1) * gd[i];
      vd[i] = C::kBeta2 * vd[i] + (1.0 - C::kBeta2) * gd[i] * gd[i];
      const double m_hat = md[i] / bc1;
      const double v_hat = vd[i] / bc2;
      pd[i] -= lr_ * (m_hat / (std::sqrt(v_hat) + C::kEpsilon) + C::kWeightDecay * pd[i]);
    }
  };
  auto step = [&](Matrix& p, const Matrix& g, Matrix* m, Matrix* v) {
    if (optimizer_ == Optimizer::Sgd) {
      sgd(p, g);
    } else {
      adamw(p, g, *m, *v);
    }
  };
  const bool adam = optimizer_ == Optimizer::AdamW;
  for (std::size_t e = 0; e < layer.n_experts(); ++e) {
    step(layer.experts[e].a, grads.d_a[e], adam ? &m_.d_a[e] : nullptr, adam ? &v_.d_a[e] : nullptr);
    step(layer.experts[e].b, grads.d_b[e], adam ? &m_.d_b[e] : nullptr, adam ? &v_.d_b[e] : nullptr);
  }
  step(layer.router.w_g, grads.d_wg, adam ? &m_.d_wg : nullptr, adam ? &v_.d_wg : nullptr);
  ++layer.revision;
}

namespace {

bool grads_finite(const LayerGradients& g) {
  for (const auto& m : g.d_a)
    if (!m.all_finite()) return false;
  for (const auto& m : g.d_b)
    if (!m.all_finite()) return false;
  return g.d_wg.all_finite();
}


}  // namespace

BatchSampler::BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(Rng(seed).fork(1)) { reshuffle(); }

std::vector<std::size_t> BatchSampler::next(std::size_t batch) {
  std::vector<std::size_t> out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  pos_ = 0;
}

TrainReport train(MoleLayer& layer, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.routing.n_experts != layer.n_experts()) {
    throw ConfigError("train: routing config has " + std::to_string(cfg.routing.n_experts) + " experts, layer has " +
                      std::to_string(layer.n_experts()));
  }
  layer.cfg = cfg.routing;
  layer.validate();
  if (data.samples.empty()) throw UsageError("train: empty dataset");
  for (const auto& s : data.samples) {
    if (s.x.size() != layer.input_dim() || s.target.size() != layer.output_dim()) {
      throw ShapeError("train: dataset dimensions do not match the layer");
    }
  }

  TrainReport report;
  report.initial_trace = make_trace(route_all(cfg.backend, layer, data.samples));
  ParameterUpdater updater(layer, cfg.optimizer, cfg.learning_rate);
  BatchSampler sampler(data.samples.size(), cfg.seed);
  report.steps.reserve(cfg.steps);
  report.step_seconds.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    const auto batch = sampler.next(cfg.batch_size);
    BatchResult res;
    try {
      res = batch_step(cfg.backend, layer, data.samples, batch, cfg.loss);
    } catch (const NumericError& e) {
      report.divergence = Divergence{step, e.what()};
      break;
    }
    if (!std::isfinite(res.total_loss) || !grads_finite(res.grads)) {
      report.divergence = Divergence{step, "non-finite loss " + format_real(res.total_loss)};
      break;
    }
    StepRecord rec{res.total_loss, res.task_loss, res.aux_loss, res.mean_entropy_norm, 0, 0, 0};
    for (const auto& d : res.stats.decisions) {
      switch (d.strategy) {
        case Strategy::Soft:
          ++rec.soft;
          break;
        case Strategy::TopP:
          ++rec.top_p;
          break;
        case Strategy::TopKFallback:
          ++rec.top_k_fallback;
          break;
      }
    }
    report.steps.push_back(rec);
    updater.apply(layer, res.grads);
    report.step_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }

  if (!report.steps.empty()) {
    report.rounds = round_stats(report.total_losses(), cfg.round_length);
  } else {
    report.rounds.round_length = cfg.round_length;
  }
  if (!report.diverged()) report.final_trace = make_trace(route_all(cfg.backend, layer, data.samples));
  return report;
}

void RunSpec::validate() const {
  task.validate();
  dims.validate();
  train.validate();
  if (dims.input_dim != task.input_dim || dims.output_dim != task.output_dim) {
    throw ConfigError("layer dimensions must match the task dimensions");
  }
}

RunResult run_experiment(const RunSpec& spec) {
  spec.validate();
  Dataset data = generate_task(spec.task);
  Rng rng(spec.train.seed);
  MoleLayer layer = init_layer(spec.dims, spec.train.routing, rng, data.pretrained);
  TrainReport report = train(layer, data, spec.train);
  return {std::move(report), std::move(layer), std::move(data)};
}

void apply_axis_value(RunSpec& spec, const std::string& name, double value) {
  auto& t = spec.train;
  auto as_count = [&](const std::string& what) {
    if (!(value >= 1.0) || std::floor(value) != value) throw ConfigError(what + " must be a positive integer");
    return static_cast<std::size_t>(value);
  };
  if (name == "beta" || name == "loss.beta") {
    t.loss.beta = value;
  } else if (name == "alpha" || name == "loss.alpha") {
    t.loss.alpha = value;
  } else if (name == "q" || name == "entropic_index") {
    t.routing.entropic_index = value;
    t.loss.entropic_index = value;
  } else if (name == "routing.entropic_index") {
    t.routing.entropic_index = value;
  } else if (name == "loss.entropic_index") {
    t.loss.entropic_index = value;
  } else if (name == "threshold" || name == "entropy_threshold" || name == "routing.entropy_threshold") {
    t.routing.entropy_threshold = value;
  } else if (name == "p" || name == "top_p" || name == "routing.top_p") {
    t.routing.top_p = value;
  } else if (name == "k" || name == "keep_top_k" || name == "routing.keep_top_k") {
    t.routing.keep_top_k = as_count(name);
  } else if (name == "lr" || name == "learning_rate" || name == "train.learning_rate") {
    t.learning_rate = value;
  } else {
    throw ConfigError("unknown ablation axis '" + name + "'");
  }
}

std::vector<AblationPoint> ablate(const RunSpec& base, const std::vector<AblationAxis>& grid) {
  base.validate();
  std::vector<AblationPoint> points;
  std::size_t total = 1;
  for (const auto& axis : grid) {
    if (axis.values.empty()) throw ConfigError("ablation axis '" + axis.name + "' has no values");
    total *= axis.values.size();
  }
  for (std::size_t flat = 0; flat < total; ++flat) {
    AblationPoint point{{}, base, {}};
    std::size_t rem = flat;
    std::vector<std::size_t> idx(grid.size());
    for (std::size_t a = grid.size(); a-- > 0;) {
      idx[a] = rem % grid[a].values.size();
      rem /= grid[a].values.size();
    }
    for (std::size_t a = 0; a < grid.size(); ++a) {
      const double v = grid[a].values[idx[a]];
      apply_axis_value(point.spec, grid[a].name, v);
      point.params.emplace_back(grid[a].name, v);
    }
    point.spec.validate();
    points.push_back(std::move(point));
  }

  detail::ExceptionSlot slot;
  const auto n = static_cast<std::ptrdiff_t>(points.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    slot.run([&] {
      auto& p = points[static_cast<std::size_t>(i)];
      p.report = run_experiment(p.spec).report;
    });
  }
  slot.rethrow();
  return points;
}

double grad_rel_error(double analytic, double numeric, double loss_value) {
  const double floor = kGradCheckFloor * std::max(1.0, std::abs(loss_value));
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

bool same_routing(const std::vector<RouterDecision>& a, const std::vector<RouterDecision>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].strategy != b[i].strategy || a[i].selected != b[i].selected) return false;
  }
  return true;
}

}  // namespace

GradCheckReport grad_check(const MoleLayer& layer, std::span<const Sample> data, std::span<const std::size_t> indices,
                           const LossConfig& loss, double eps, const GradientTamper& tamper) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-4]");
  const BatchResult base = kernels::batch_step_serial(layer, data, indices, loss);
  LayerGradients grads = base.grads;
  if (tamper) tamper(grads);
  const auto& reference = base.stats.decisions;

  MoleLayer probe = layer;
  GradCheckReport report;
  auto check = [&](const std::string& name, double& param, double analytic) {
    const double saved = param;
    param = saved + eps;
    const BatchLoss up = batch_loss(probe, data, indices, loss);
    param = saved - eps;
    const BatchLoss down = batch_loss(probe, data, indices, loss);
    param = saved;
    if (!same_routing(reference, up.decisions) || !same_routing(reference, down.decisions)) {
      report.skipped.push_back(name);
      return;
    }
    const double numeric = (up.total_loss - down.total_loss) / (2.0 * eps);
    const double err = grad_rel_error(analytic, numeric, base.total_loss);
    ++report.checked;
    if (report.checked == 1 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst = {name, analytic, numeric, err};
    }
  };
  auto sweep = [&](const std::string& prefix, Matrix& param, const Matrix& grad) {
    for (std::size_t r = 0; r < param.rows(); ++r)
      for (std::size_t c = 0; c < param.cols(); ++c)
        check(prefix + "[" + std::to_string(r) + "," + std::to_string(c) + "]", param(r, c), grad(r, c));
  };
  for (std::size_t e = 0; e < probe.n_experts(); ++e) {
    const std::string p = "experts[" + std::to_string(e) + "]";
    sweep(p + ".a", probe.experts[e].a, grads.d_a[e]);
    sweep(p + ".b", probe.experts[e].b, grads.d_b[e]);
  }
  sweep("router.w_g", probe.router.w_g, grads.d_wg);
  return report;
}

}  // namespace dynmole
