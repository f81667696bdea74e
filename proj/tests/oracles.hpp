#pragma once

// Independent reference computations used as test oracles. Nothing here
// calls into the library's numeric code paths: entropies use long double
// and std::pow directly, routing uses brute force, and the layer forward is
// a plain loop over the defining sum.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "dynmole/mole.hpp"
#include "dynmole/numerics.hpp"

namespace oracle {

inline long double tsallis(const std::vector<double>& p, double q) {
  if (std::abs(q - 1.0) <= 1e-9) {
    long double h = 0;
    for (double v : p)
      if (v > 0) h -= static_cast<long double>(v) * std::log(static_cast<long double>(v));
    return h;
  }
  long double s = 0;
  for (double v : p)
    if (v > 0) s += std::pow(static_cast<long double>(v), static_cast<long double>(q));
  return (1.0L - s) / (static_cast<long double>(q) - 1.0L);
}

inline long double shannon(const std::vector<double>& p) { return tsallis(p, 1.0); }

inline long double tsallis_uniform(std::size_t n, double q) { return tsallis(std::vector<double>(n, 1.0 / n), q); }

inline long double normalized(const std::vector<double>& p, double q) {
  return tsallis(p, q) / tsallis_uniform(p.size(), q);
}

// Expert i outranks j when it has more mass, or equal mass and lower index.
inline bool outranks(const std::vector<double>& p, std::size_t i, std::size_t j) {
  return p[i] > p[j] || (p[i] == p[j] && i < j);
}

// Top-k by counting, for each expert, how many experts outrank it.
inline std::vector<std::size_t> top_k(const std::vector<double>& p, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::size_t above = 0;
    for (std::size_t j = 0; j < p.size(); ++j) above += (j != i && outranks(p, j, i));
    if (above < k) out.push_back(i);
  }
  return out;
}

// Sum of a subset, added from the largest member down.
inline double subset_mass(const std::vector<double>& p, unsigned mask) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (mask & (1u << i)) members.push_back(i);
  std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return outranks(p, a, b); });
  double s = 0;
  for (std::size_t i : members) s += p[i];
  return s;
}

// Smallest subset reaching mass p, found by enumerating every subset. Among
// minimum-size subsets the heaviest is the top-m set, so return that one.
inline std::vector<std::size_t> top_p(const std::vector<double>& p, double threshold) {
  const std::size_t n = p.size();
  if (threshold >= 1.0) {
    std::vector<std::size_t> nz;
    for (std::size_t i = 0; i < n; ++i)
      if (p[i] > 0) nz.push_back(i);
    return nz;
  }
  std::size_t best = n;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    const auto size = static_cast<std::size_t>(__builtin_popcount(mask));
    if (size < best && subset_mass(p, mask) >= threshold) best = size;
  }
  return top_k(p, best);
}

struct Routed {
  int strategy;  // 0 soft, 1 top-p, 2 top-k fallback
  std::vector<std::size_t> selected;
  std::vector<double> weights;
};

inline Routed hybrid(const std::vector<double>& p, double q, double threshold, double top_p_value, std::size_t k) {
  Routed r;
  if (normalized(p, q) > threshold) {
    r.strategy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) r.selected.push_back(i);
    r.weights = p;
    return r;
  }
  r.selected = top_p(p, top_p_value);
  r.strategy = 1;
  if (r.selected.size() < k) {
    r.selected = top_k(p, k);
    r.strategy = 2;
  }
  long double mass = 0;
  for (std::size_t i : r.selected) mass += p[i];
  r.weights.assign(p.size(), 0.0);
  for (std::size_t i : r.selected) r.weights[i] = static_cast<double>(p[i] / mass);
  return r;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  long double m = *std::max_element(z.begin(), z.end()), s = 0;
  std::vector<long double> e(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s += e[i] = std::exp(static_cast<long double>(z[i]) - m);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<double>(e[i] / s);
  return out;
}

// y = W0 x + sum_i w_i * s_i * B_i (A_i x), written out element by element.
inline std::vector<double> mole_output(const dynmole::MoleLayer& layer, const std::vector<double>& x,
                                       const std::vector<double>& gates) {
  const std::size_t d = layer.output_dim(), k = layer.input_dim();
  std::vector<double> y(d, 0.0);
  for (std::size_t o = 0; o < d; ++o)
    for (std::size_t c = 0; c < k; ++c) y[o] += layer.w0(o, c) * x[c];
  for (std::size_t e = 0; e < layer.n_experts(); ++e) {
    if (gates[e] == 0.0) continue;
    const auto& ex = layer.experts[e];
    std::vector<double> h(ex.rank, 0.0);
    for (std::size_t r = 0; r < ex.rank; ++r)
      for (std::size_t c = 0; c < k; ++c) h[r] += ex.a(r, c) * x[c];
    for (std::size_t o = 0; o < d; ++o) {
      double v = 0;
      for (std::size_t r = 0; r < ex.rank; ++r) v += ex.b(o, r) * h[r];
      y[o] += gates[e] * ex.scaling * v;
    }
  }
  return y;
}

inline double half_sq_error(const std::vector<double>& y, const std::vector<double>& t) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += 0.5 * (y[i] - t[i]) * (y[i] - t[i]);
  return s;
}

inline double central_diff(const std::function<double()>& f, double& param, double eps) {
  const double saved = param;
  param = saved + eps;
  const double up = f();
  param = saved - eps;
  const double down = f();
  param = saved;
  return (up - down) / (2 * eps);
}

// Relative error with an absolute floor so entries whose true value is zero
// compare rounding noise against the floor rather than against ~0.
inline double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Pointers to every trainable scalar of a layer, with matching gradient
// slots, in the same order.
struct ParamRef {
  double* value;
  const double* grad;
};

inline std::vector<ParamRef> param_refs(dynmole::MoleLayer& layer, const dynmole::LayerGradients& g) {
  std::vector<ParamRef> out;
  for (std::size_t e = 0; e < layer.n_experts(); ++e) {
    auto a = layer.experts[e].a.data();
    auto ga = g.d_a[e].data();
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back({&a[i], &ga[i]});
    auto b = layer.experts[e].b.data();
    auto gb = g.d_b[e].data();
    for (std::size_t i = 0; i < b.size(); ++i) out.push_back({&b[i], &gb[i]});
  }
  auto w = layer.router.w_g.data();
  auto gw = g.d_wg.data();
  for (std::size_t i = 0; i < w.size(); ++i) out.push_back({&w[i], &gw[i]});
  return out;
}

// A layer with every trainable matrix randomized so no gradient is
// structurally zero.
inline dynmole::MoleLayer random_layer(const dynmole::LayerDims& dims, const dynmole::RoutingConfig& cfg,
                                       dynmole::Rng& rng, double router_scale = 1.0) {
  auto layer = dynmole::init_layer(dims, cfg, rng);
  for (auto& e : layer.experts) {
    for (double& v : e.a.data()) v = rng.normal() * 0.5;
    for (double& v : e.b.data()) v = rng.normal() * 0.5;
  }
  for (double& v : layer.router.w_g.data()) v = rng.normal() * router_scale;
  return layer;
}

inline std::vector<double> random_vector(dynmole::Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

// Random distribution over n experts. Spread varies from nearly uniform to
// sharply peaked; some draws contain exact ties or zero entries.
inline std::vector<double> random_dist(dynmole::Rng& rng, std::size_t n) {
  const double spread = std::exp(rng.uniform(-3.0, 2.5));
  std::vector<double> w(n);
  for (double& v : w) v = std::exp(spread * rng.normal());
  const double kind = rng.uniform();
  if (kind < 0.1 && n > 2) w[rng.below(n)] = 0.0;
  if (kind > 0.9) w[rng.below(n)] = w[rng.below(n)];
  double s = 0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

}  // namespace oracle
