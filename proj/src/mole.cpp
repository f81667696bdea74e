#include "dynmole/mole.hpp"

#include <atomic>
#include <cmath>
#include <string>

namespace dynmole {

namespace {

void check_input(const MoleLayer& layer, std::span<const double> x) {
  if (x.size() != layer.input_dim()) {
    throw ShapeError("input has length " + std::to_string(x.size()) + ", layer expects " +
                     std::to_string(layer.input_dim()));
  }
}

}  // namespace

std::uint64_t fresh_layer_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void LayerDims::validate() const {
  if (input_dim == 0 || output_dim == 0) throw ConfigError("layer dimensions must be positive");
  if (rank == 0) throw ConfigError("lora rank must be positive");
  if (2 * rank > std::min(input_dim, output_dim)) {
    throw ConfigError("lora rank " + std::to_string(rank) + " is not low-rank for a " + std::to_string(output_dim) +
                      "x" + std::to_string(input_dim) + " weight (need 2r <= min(d, k))");
  }
  if (!(std::isfinite(lora_alpha) && lora_alpha > 0.0)) throw ConfigError("lora alpha must be positive");
}

LayerDims LayerDims::desk(std::size_t input_dim, std::size_t output_dim) {
  return {input_dim, output_dim, 4, 8.0};
}

LayerDims LayerDims::table_preset(std::size_t input_dim, std::size_t output_dim) {
  return {input_dim, output_dim, 24, 48.0};
}

LayerDims LayerDims::setup_text_preset(std::size_t input_dim, std::size_t output_dim) {
  return {input_dim, output_dim, 16, 32.0};
}

LayerDims MoleLayer::dims() const {
  const auto& e = experts.front();
  return {input_dim(), output_dim(), e.rank, e.scaling * static_cast<double>(e.rank)};
}

void MoleLayer::validate() const {
  cfg.validate();
  if (experts.empty()) throw ConfigError("layer has no experts");
  if (experts.size() != cfg.n_experts) {
    throw ConfigError("layer has " + std::to_string(experts.size()) + " experts, routing config expects " +
                      std::to_string(cfg.n_experts));
  }
  if (router.w_g.rows() != input_dim() || router.w_g.cols() != experts.size()) {
    throw ShapeError("router weight shape does not match input_dim x n_experts");
  }
  const std::size_t r = experts.front().rank;
  for (const auto& e : experts) {
    if (e.rank != r || e.a.rows() != r || e.a.cols() != input_dim() || e.b.rows() != output_dim() ||
        e.b.cols() != r) {
      throw ShapeError("expert shapes are inconsistent with the layer");
    }
  }
}

std::size_t MoleLayer::trainable_count() const {
  std::size_t n = router.w_g.size();
  for (const auto& e : experts) n += e.a.size() + e.b.size();
  return n;
}

LayerGradients LayerGradients::zeros_like(const MoleLayer& layer) {
  LayerGradients g;
  g.d_a.reserve(layer.n_experts());
  g.d_b.reserve(layer.n_experts());
  for (const auto& e : layer.experts) {
    g.d_a.emplace_back(e.a.rows(), e.a.cols());
    g.d_b.emplace_back(e.b.rows(), e.b.cols());
  }
  g.d_wg = Matrix(layer.router.w_g.rows(), layer.router.w_g.cols());
  return g;
}

LayerGradients& LayerGradients::operator+=(const LayerGradients& other) {
  auto add = [](Matrix& dst, const Matrix& src) {
    if (dst.rows() != src.rows() || dst.cols() != src.cols()) throw ShapeError("gradient shape mismatch");
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  };
  if (d_a.size() != other.d_a.size()) throw ShapeError("gradient expert count mismatch");
  for (std::size_t i = 0; i < d_a.size(); ++i) {
    add(d_a[i], other.d_a[i]);
    add(d_b[i], other.d_b[i]);
  }
  add(d_wg, other.d_wg);
  return *this;
}

MoleLayer init_layer(const LayerDims& dims, const RoutingConfig& cfg, Rng& rng, std::optional<Matrix> pretrained) {
  dims.validate();
  cfg.validate();
  MoleLayer layer;
  layer.seed = rng.seed();
  layer.cfg = cfg;
  layer.id = fresh_layer_id();

  if (pretrained) {
    if (pretrained->rows() != dims.output_dim || pretrained->cols() != dims.input_dim) {
      throw ShapeError("pretrained weight shape does not match layer dims");
    }
    layer.w0 = std::move(*pretrained);
  } else {
    layer.w0 = Matrix(dims.output_dim, dims.input_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims.input_dim));
    for (double& v : layer.w0.data()) v = scale * rng.normal();
  }

  layer.router.w_g = Matrix(dims.input_dim, cfg.n_experts);

  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.input_dim));
  layer.experts.reserve(cfg.n_experts);
  for (std::size_t i = 0; i < cfg.n_experts; ++i) {
    LoraExpert e{Matrix(dims.rank, dims.input_dim), Matrix(dims.output_dim, dims.rank), dims.rank, dims.scaling()};
    for (double& v : e.a.data()) v = rng.uniform(-bound, bound);
    layer.experts.push_back(std::move(e));
  }
  return layer;
}

Vector expert_forward(const LoraExpert& e, std::span<const double> x) {
  Vector out = matvec(e.b, matvec(e.a, x));
  for (double& v : out) v *= e.scaling;
  return out;
}

Vector router_logits(const MoleLayer& layer, std::span<const double> x) {
  check_input(layer, x);
  return vecmat(x, layer.router.w_g);
}

RouterDecision route(const MoleLayer& layer, std::span<const double> x) {
  return hybrid_route(softmax(router_logits(layer, x)), layer.cfg);
}

MoleForward mole_forward(const MoleLayer& layer, std::span<const double> x) {
  check_input(layer, x);
  ForwardCache cache;
  cache.layer_id = layer.id;
  cache.revision = layer.revision;
  cache.x.assign(x.begin(), x.end());
  cache.logits = router_logits(layer, x);
  const std::size_t n = layer.n_experts();
  if (n == 1) {
    // A single expert always takes the full weight; no entropy is defined.
    ProbDist one = ProbDist::one_hot(1, 0);
    cache.decision = RouterDecision{Strategy::Soft, {0}, one, one, 0.0};
  } else {
    cache.decision = hybrid_route(softmax(cache.logits), layer.cfg);
  }
  cache.hidden.assign(n, {});
  cache.expert_out.assign(n, {});

  Vector y = matvec(layer.w0, x);
  for (std::size_t i : cache.decision.selected) {
    const auto& e = layer.experts[i];
    cache.hidden[i] = matvec(e.a, x);
    Vector out = matvec(e.b, cache.hidden[i]);
    for (double& v : out) v *= e.scaling;
    const double w = cache.decision.weights[i];
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += w * out[j];
    cache.expert_out[i] = std::move(out);
  }
  return {std::move(y), std::move(cache)};
}

Vector mole_output_with_gates(const MoleLayer& layer, std::span<const double> x, std::span<const double> gates) {
  check_input(layer, x);
  if (gates.size() != layer.n_experts()) throw ShapeError("gate vector length differs from expert count");
  Vector y = matvec(layer.w0, x);
  for (std::size_t i = 0; i < gates.size(); ++i) {
    if (gates[i] == 0.0) continue;
    const Vector out = expert_forward(layer.experts[i], x);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += gates[i] * out[j];
  }
  return y;
}

Vector gate_gradient(const ForwardCache& cache, std::span<const double> dy) {
  Vector g(cache.expert_out.size(), 0.0);
  for (std::size_t i : cache.decision.selected) g[i] = dot(dy, cache.expert_out[i]);
  return g;
}

BackwardFactors backward_factors(const MoleLayer& layer, const ForwardCache& cache, std::span<const double> dy,
                                 std::span<const double> extra_dlogits) {
  if (cache.layer_id != layer.id || cache.revision != layer.revision) {
    throw UsageError("mole_backward: forward cache does not belong to the current layer parameters");
  }
  if (dy.size() != layer.output_dim()) throw ShapeError("mole_backward: dy length differs from output_dim");
  const std::size_t n = layer.n_experts();
  if (!extra_dlogits.empty() && extra_dlogits.size() != n) {
    throw ShapeError("mole_backward: extra logit gradient length differs from expert count");
  }
  const auto& decision = cache.decision;
  BackwardFactors f;
  f.dy.assign(dy.begin(), dy.end());
  f.scale.assign(n, 0.0);
  f.dh.resize(n);

  // Expert parameters: y += w_i s B_i (A_i x).
  for (std::size_t i : decision.selected) {
    const auto& e = layer.experts[i];
    f.scale[i] = decision.weights[i] * e.scaling;
    f.dh[i] = matvec_transposed(e.b, dy);
  }

  // Router: mixture weights -> raw gates (renormalization) -> logits (softmax).
  f.dz.assign(n, 0.0);
  if (n > 1) {
    const Vector dw = gate_gradient(cache, dy);
    const auto& g = decision.raw_dist;
    Vector dg(n, 0.0);
    if (decision.strategy == Strategy::Soft) {
      dg = dw;
    } else {
      double mass = 0.0;
      for (std::size_t i : decision.selected) mass += g[i];
      if (mass > 0.0) {
        double weighted = 0.0;
        for (std::size_t i : decision.selected) weighted += decision.weights[i] * dw[i];
        for (std::size_t i : decision.selected) dg[i] = (dw[i] - weighted) / mass;
      }
    }
    double g_dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) g_dot += g[j] * dg[j];
    for (std::size_t j = 0; j < n; ++j) f.dz[j] = g[j] * (dg[j] - g_dot);
  }
  if (!extra_dlogits.empty()) {
    for (std::size_t j = 0; j < n; ++j) f.dz[j] += extra_dlogits[j];
  }
  return f;
}

void accumulate_gradients(const ForwardCache& cache, const BackwardFactors& f, LayerGradients& acc) {
  for (std::size_t i : cache.decision.selected) {
    add_outer(acc.d_b[i], f.dy, cache.hidden[i], f.scale[i]);
    add_outer(acc.d_a[i], f.dh[i], cache.x, f.scale[i]);
  }
  add_outer(acc.d_wg, cache.x, f.dz);
}

void mole_backward_into(const MoleLayer& layer, const ForwardCache& cache, std::span<const double> dy,
                        std::span<const double> extra_dlogits, LayerGradients& acc) {
  accumulate_gradients(cache, backward_factors(layer, cache, dy, extra_dlogits), acc);
}

LayerGradients mole_backward(const MoleLayer& layer, const ForwardCache& cache, std::span<const double> dy,
                             std::span<const double> extra_dlogits) {
  auto grads = LayerGradients::zeros_like(layer);
  mole_backward_into(layer, cache, dy, extra_dlogits, grads);
  return grads;
}

}  // namespace dynmole
