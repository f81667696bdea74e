#include <cmath>

#include <doctest.h>

#include "dynmole/errors.hpp"
#include "dynmole/losses.hpp"
#include "oracles.hpp"

using namespace dynmole;

namespace {

std::vector<RouterDecision> decide(const std::vector<std::vector<double>>& logits, const RoutingConfig& cfg) {
  std::vector<RouterDecision> out;
  for (const auto& z : logits) out.push_back(hybrid_route(softmax(z), cfg));
  return out;
}

RouterDecision uniform_soft(std::size_t n) { return hybrid_route(ProbDist::uniform(n), RoutingConfig::soft_only(n)); }

RouterDecision one_hot_decision(std::size_t n, std::size_t i) {
  return {Strategy::TopP, {i}, ProbDist::one_hot(n, i), ProbDist::one_hot(n, i), 0.0};
}

}  // namespace

TEST_CASE("batch stats") {
  const auto s = BatchRoutingStats::from_decisions({uniform_soft(4), one_hot_decision(4, 2)});
  // 5 activations: 1 per expert from the soft token plus expert 2 again.
  CHECK(s.dispatch_fraction == Vector{0.2, 0.2, 0.4, 0.2});
  CHECK(s.mean_prob[2] == doctest::Approx(0.625));
  CHECK(s.mean_prob[0] == doctest::Approx(0.125));
  CHECK_THROWS_AS(BatchRoutingStats::from_decisions({}), UsageError);
}

TEST_CASE("entropy loss") {
  const std::vector<RouterDecision> uni(7, uniform_soft(6));
  const auto s = BatchRoutingStats::from_decisions(uni);
  CHECK(entropy_loss(s, {.beta = 0.0, .alpha = 0.0, .entropic_index = 1.1}) == 0.0);
  CHECK(std::abs(entropy_loss(s, {.beta = 1.0, .alpha = 0.0, .entropic_index = 1.1}) - 1.6404) <= 1e-4);
  const std::vector<RouterDecision> hot(3, one_hot_decision(6, 1));
  CHECK(entropy_loss(BatchRoutingStats::from_decisions(hot), {.beta = 1.0, .alpha = 0.0, .entropic_index = 1.1}) ==
        0.0);
}

TEST_CASE("negative beta subtracts the entropy term") {
  const std::vector<RouterDecision> uni(3, uniform_soft(6));
  const auto s = BatchRoutingStats::from_decisions(uni);
  CHECK(entropy_loss(s, {.beta = -0.5, .alpha = 0.0, .entropic_index = 1.1}) ==
        -entropy_loss(s, {.beta = 0.5, .alpha = 0.0, .entropic_index = 1.1}));
}

TEST_CASE("entropy loss is invariant under token order") {
  Rng rng(41);
  std::vector<std::vector<double>> z;
  for (int t = 0; t < 6; ++t) z.push_back(oracle::random_vector(rng, 5, 2.0));
  const LossConfig cfg{.beta = 0.3, .alpha = 0.2, .entropic_index = 1.3};
  const auto a = entropy_loss(BatchRoutingStats::from_decisions(decide(z, RoutingConfig::hybrid(5))), cfg);
  std::reverse(z.begin(), z.end());
  const auto b = entropy_loss(BatchRoutingStats::from_decisions(decide(z, RoutingConfig::hybrid(5))), cfg);
  CHECK(a == doctest::Approx(b).epsilon(1e-15));
}

TEST_CASE("load balance loss") {
  const LossConfig cfg{.beta = 0.0, .alpha = 0.3, .entropic_index = 1.1};
  const std::vector<RouterDecision> uni(4, uniform_soft(6));
  CHECK(std::abs(load_balance_loss(BatchRoutingStats::from_decisions(uni), cfg, 6) - 0.3) <= 1e-15);
  const std::vector<RouterDecision> hot(4, one_hot_decision(6, 3));
  CHECK(std::abs(load_balance_loss(BatchRoutingStats::from_decisions(hot), cfg, 6) - 1.8) <= 1e-15);
  CHECK(load_balance_loss(BatchRoutingStats::from_decisions(hot), {.beta = 0.0, .alpha = 0.0, .entropic_index = 1.1},
                          6) == 0.0);

  // With f = P, the loss is alpha * N * |P|^2 >= alpha, minimized at uniform.
  Rng rng(42);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(6);
    for (double& v : p) v = 1.0 / 6 + rng.uniform(-0.05, 0.05);
    double s = 0;
    for (double v : p) s += v;
    for (double& v : p) v /= s;
    BatchRoutingStats st = BatchRoutingStats::from_decisions(uni);
    st.dispatch_fraction = p;
    st.mean_prob = p;
    CHECK(load_balance_loss(st, cfg, 6) >= 0.3);
  }
}

TEST_CASE("auxiliary loss") {
  const std::vector<RouterDecision> uni(3, uniform_soft(6));
  const auto s = BatchRoutingStats::from_decisions(uni);
  CHECK(auxiliary_loss(s, {.beta = 0.0, .alpha = 0.0, .entropic_index = 1.1}, 6) == 0.0);
  CHECK(std::abs(auxiliary_loss(s, {.beta = 1.0, .alpha = 1.0, .entropic_index = 1.1}, 6) - 2.6404) <= 1e-4);
  Rng rng(43);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::vector<double>> z;
    for (int i = 0; i < 5; ++i) z.push_back(oracle::random_vector(rng, 4, 2.0));
    const auto st = BatchRoutingStats::from_decisions(decide(z, RoutingConfig::hybrid(4)));
    const LossConfig cfg{.beta = rng.uniform(), .alpha = rng.uniform(), .entropic_index = rng.uniform(0.8, 1.5)};
    CHECK(auxiliary_loss(st, cfg, 4) == doctest::Approx(entropy_loss(st, cfg) + load_balance_loss(st, cfg, 4)));
  }
}

TEST_CASE("loss config validation") {
  CHECK_NOTHROW((LossConfig{.beta = -1e-3, .alpha = 0.0, .entropic_index = 1.1}).validate());
  CHECK_THROWS_AS((LossConfig{.beta = NAN, .alpha = 0.0, .entropic_index = 1.1}).validate(), ConfigError);
  CHECK_THROWS_AS((LossConfig{.beta = 0.0, .alpha = -1.0, .entropic_index = 1.1}).validate(), ConfigError);
  CHECK_THROWS_AS((LossConfig{.beta = 0.0, .alpha = 0.0, .entropic_index = 0.0}).validate(), ConfigError);
}

TEST_CASE("task loss") {
  const auto same = task_loss(std::vector<double>{1, 2}, std::vector<double>{1, 2});
  CHECK(same.value == 0.0);
  CHECK(same.grad == Vector{0, 0});
  const auto l = task_loss(std::vector<double>{1, 0}, std::vector<double>{0, 0});
  CHECK(l.value == 0.5);
  CHECK(l.grad == Vector{1, 0});
  CHECK_THROWS_AS(task_loss(std::vector<double>{1}, std::vector<double>{1, 2}), ShapeError);
  Rng rng(44);
  const auto y = oracle::random_vector(rng, 5), tgt = oracle::random_vector(rng, 5);
  const auto num = finite_diff_grad([&](const Vector& v) { return oracle::half_sq_error(v, tgt); }, y, 1e-5);
  const auto g = task_loss(y, tgt).grad;
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(g[i] - num[i]) <= 1e-7);
}

TEST_CASE("aux loss gradients") {
  const std::vector<std::vector<double>> z = {{0.3, -1.0, 2.0, 0.1}};
  const auto st = BatchRoutingStats::from_decisions(decide(z, RoutingConfig::hybrid(4)), z);
  const auto none = aux_loss_grads(st, {.beta = 0.0, .alpha = 0.0, .entropic_index = 1.1}, 4);
  for (double v : none[0]) CHECK(v == 0.0);

  // Single token, alpha = 0: beta times the softmax Jacobian applied to dS/dp.
  const LossConfig ent{.beta = 0.7, .alpha = 0.0, .entropic_index = 1.1};
  const auto g = aux_loss_grads(st, ent, 4)[0];
  const auto p = oracle::softmax(z[0]);
  std::vector<double> dsdp(4);
  for (std::size_t i = 0; i < 4; ++i) dsdp[i] = -(1.1 / 0.1) * std::pow(p[i], 0.1);
  double mean = 0;
  for (std::size_t i = 0; i < 4; ++i) mean += p[i] * dsdp[i];
  for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(0.7 * p[i] * (dsdp[i] - mean)).epsilon(1e-10));

  // Uniform token with only the balance term is a stationary point.
  const std::vector<std::vector<double>> zu = {{0.5, 0.5, 0.5, 0.5}};
  const auto su = BatchRoutingStats::from_decisions(decide(zu, RoutingConfig::hybrid(4)), zu);
  const auto balance_only = aux_loss_grads(su, {.beta = 0.0, .alpha = 2.0, .entropic_index = 1.1}, 4);
  for (double v : balance_only[0]) CHECK(std::abs(v) <= 1e-15);
}

TEST_CASE("aux loss gradients match finite differences") {
  Rng rng(45);
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 2 + rng.below(5), tokens = 1 + rng.below(6);
    const RoutingConfig rc{n, rng.uniform(0.5, 1.0), 1 + rng.below(n), rng.uniform(0.5, 1.0), rng.uniform(0.9, 1.5)};
    const LossConfig lc{.beta = rng.uniform(-1.0, 1.0), .alpha = rng.uniform(), .entropic_index = rng.uniform(0.9, 1.5)};
    std::vector<std::vector<double>> z;
    for (std::size_t i = 0; i < tokens; ++i) z.push_back(oracle::random_vector(rng, n, 1.5));
    const auto base = decide(z, rc);
    const auto st = BatchRoutingStats::from_decisions(base, z);
    const auto g = aux_loss_grads(st, lc, n);
    const double floor = 1e-4 * std::max(1.0, std::abs(auxiliary_loss(st, lc, n)));
    for (std::size_t tok = 0; tok < tokens; ++tok) {
      for (std::size_t i = 0; i < n; ++i) {
        bool flipped = false;
        auto f = [&] {
          const auto d = decide(z, rc);
          for (std::size_t k = 0; k < tokens; ++k) flipped = flipped || d[k].selected != base[k].selected;
          return auxiliary_loss(BatchRoutingStats::from_decisions(d), lc, n);
        };
        const double num = oracle::central_diff(f, z[tok][i], 1e-6);
        if (!flipped) CHECK(oracle::rel_error(g[tok][i], num, floor) < 1e-5);
      }
    }
  }
}

TEST_CASE("descending the entropy loss drives a free distribution to one-hot") {
  Rng rng(46);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> z = {oracle::random_vector(rng, 6, 0.5)};
    const LossConfig cfg{.beta = 1.0, .alpha = 0.0, .entropic_index = 1.1};
    for (int step = 0; step < 500; ++step) {
      const auto st = BatchRoutingStats::from_decisions(decide(z, RoutingConfig::hybrid(6)), z);
      const auto g = aux_loss_grads(st, cfg, 6);
      for (std::size_t i = 0; i < 6; ++i) z[0][i] -= 1.0 * g[0][i];
    }
    CHECK(normalized_tsallis(softmax(z[0]), EntropicIndex(1.1)) < 0.05);
  }
}
