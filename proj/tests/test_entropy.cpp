#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "dynmole/entropy.hpp"
#include "dynmole/errors.hpp"
#include "oracles.hpp"

using namespace dynmole;

namespace {
const EntropicIndex q11(1.1);
}

TEST_CASE("shannon entropy") {
  CHECK(shannon_entropy(ProbDist({1, 0, 0})) == 0.0);
  CHECK(shannon_entropy(ProbDist::uniform(6)) == doctest::Approx(std::log(6.0)).epsilon(1e-14));
  CHECK(shannon_entropy(ProbDist({0.5, 0.5})) == doctest::Approx(0.69315).epsilon(1e-5));
}

TEST_CASE("tsallis entropy") {
  CHECK(tsallis_entropy(ProbDist::one_hot(5, 3), q11) == 0.0);
  CHECK(tsallis_entropy(ProbDist::one_hot(5, 3), EntropicIndex(2.7)) == 0.0);
  const double direct = (1 - std::pow(6.0, -0.1)) / 0.1;
  CHECK(tsallis_entropy(ProbDist::uniform(6), q11) == doctest::Approx(direct).epsilon(1e-13));
  CHECK(std::abs(tsallis_entropy(ProbDist::uniform(6), q11) - 1.6404) <= 1e-4);
  CHECK(std::abs(tsallis_entropy(ProbDist({0.5, 0.5}), EntropicIndex(1.000001)) - 0.69315) <= 1e-4);
  CHECK(tsallis_entropy(ProbDist({0.2, 0.8}), EntropicIndex(1.0)) == shannon_entropy(ProbDist({0.2, 0.8})));
  CHECK_THROWS_AS(EntropicIndex(0.0), DomainError);
  CHECK_THROWS_AS(EntropicIndex(-1.0), DomainError);
}

TEST_CASE("tsallis entropy matches direct evaluation on random inputs") {
  Rng rng(21);
  for (int t = 0; t < 300; ++t) {
    const auto p = oracle::random_dist(rng, 2 + rng.below(15));
    const double q = rng.uniform(0.2, 3.0);
    const double expect = static_cast<double>(oracle::tsallis(p, q));
    CHECK(std::abs(tsallis_entropy(ProbDist(p), EntropicIndex(q)) - expect) <= 1e-12 * std::max(1.0, expect));
  }
}

TEST_CASE("tsallis max") {
  CHECK(tsallis_max(1, q11) == 0.0);
  CHECK(std::abs(tsallis_max(6, q11) - 1.6404) <= 1e-4);
  CHECK(std::abs(tsallis_max(4, q11) - 1.2945) <= 1e-4);
  CHECK(tsallis_max(4, EntropicIndex(1.0)) == doctest::Approx(std::log(4.0)));
  for (std::size_t n = 1; n <= 16; ++n)
    for (double q : {0.5, 1.0, 1.1, 1.4, 2.0})
      CHECK(tsallis_max(n, EntropicIndex(q)) == doctest::Approx(tsallis_entropy(ProbDist::uniform(n), EntropicIndex(q))).epsilon(1e-14));
}

TEST_CASE("normalized tsallis") {
  for (std::size_t n = 2; n <= 12; ++n) CHECK(normalized_tsallis(ProbDist::uniform(n), q11) == doctest::Approx(1.0));
  CHECK(normalized_tsallis(ProbDist::one_hot(4, 1), q11) == 0.0);
  const std::vector<double> p = {0.9, 0.05, 0.03, 0.02};
  const double expect = static_cast<double>(oracle::normalized(p, 1.1));
  CHECK(normalized_tsallis(ProbDist(p), q11) == doctest::Approx(expect).epsilon(1e-13));
  CHECK(std::abs(expect - 0.291) <= 1e-3);
  CHECK_THROWS_AS(normalized_tsallis(ProbDist::one_hot(1, 0), q11), DomainError);
}

TEST_CASE("entropy bounds and permutation invariance") {
  Rng rng(22);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.below(15);
    auto p = oracle::random_dist(rng, n);
    const EntropicIndex q(rng.uniform(0.3, 2.5));
    const double s = tsallis_entropy(ProbDist(p), q);
    CHECK(s >= 0.0);
    CHECK(s <= tsallis_max(n, q) + 1e-12);
    const double e = normalized_tsallis(ProbDist(p), q);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    std::reverse(p.begin(), p.end());
    std::rotate(p.begin(), p.begin() + 1, p.end());
    CHECK(normalized_tsallis(ProbDist(p), q) == doctest::Approx(e).epsilon(1e-13));
  }
}

TEST_CASE("mixing two coordinates toward their mean never lowers entropy") {
  Rng rng(23);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.below(8);
    auto p = oracle::random_dist(rng, n);
    const EntropicIndex q(rng.uniform(0.5, 2.0));
    const double before = tsallis_entropy(ProbDist(p), q);
    const std::size_t i = rng.below(n), j = (i + 1 + rng.below(n - 1)) % n;
    const double lambda = rng.uniform(), mean = 0.5 * (p[i] + p[j]);
    p[i] += lambda * (mean - p[i]);
    p[j] += lambda * (mean - p[j]);
    CHECK(tsallis_entropy(ProbDist(p), q) >= before - 1e-12);
  }
}

TEST_CASE("tsallis gradient") {
  CHECK(tsallis_grad(ProbDist({0.5, 0.5}), EntropicIndex(2.0))[0] == doctest::Approx(-1.0));
  CHECK(std::abs(tsallis_grad(ProbDist({1e-100, 1.0}), q11)[0]) < 1e-8);
  CHECK(tsallis_grad(ProbDist({0.0, 1.0}), q11)[0] == 0.0);
  CHECK_THROWS_AS(tsallis_grad(ProbDist({0.5, 0.5}), EntropicIndex(1.0)), DomainError);

  // S_q extended off the simplex, differentiated coordinate-wise.
  Rng rng(24);
  for (int t = 0; t < 100; ++t) {
    const auto p = oracle::random_dist(rng, 2 + rng.below(7));
    bool interior = true;
    for (double v : p) interior = interior && v > 1e-3;
    if (!interior) continue;
    const double q = rng.uniform(1.05, 2.5);
    const auto g = tsallis_grad(ProbDist(p), EntropicIndex(q));
    auto f = [&](const Vector& x) {
      double s = 0;
      for (double v : x) s += std::pow(v, q);
      return (1 - s) / (q - 1);
    };
    const auto num = finite_diff_grad(f, p, 1e-6);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(oracle::rel_error(g[i], num[i], 1e-4) < 1e-5);
  }
}

TEST_CASE("shannon gradient") {
  CHECK(std::abs(shannon_grad(ProbDist({1 / std::exp(1.0), 1 - 1 / std::exp(1.0)}))[0]) < 1e-15);
  CHECK(shannon_grad(ProbDist({0.5, 0.5}))[0] == doctest::Approx(-0.3069).epsilon(1e-4));
  CHECK_THROWS_AS(shannon_grad(ProbDist({0.0, 1.0})), DomainError);
  Rng rng(25);
  for (int t = 0; t < 100; ++t) {
    const auto p = oracle::random_dist(rng, 2 + rng.below(7));
    bool interior = true;
    for (double v : p) interior = interior && v > 1e-3;
    if (!interior) continue;
    const auto g = shannon_grad(ProbDist(p));
    auto f = [](const Vector& x) {
      double s = 0;
      for (double v : x) s -= v * std::log(v);
      return s;
    };
    const auto num = finite_diff_grad(f, p, 1e-6);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(oracle::rel_error(g[i], num[i], 1e-4) < 1e-5);
  }
}

TEST_CASE("tsallis gradient is bounded where shannon is not") {
  const double q = 1.1;
  double worst_shannon = 0;
  for (double pi = 1e-8; pi < 1.0; pi *= 1.7) {
    CHECK(std::abs(tsallis_grad(ProbDist({pi, 1 - pi}), EntropicIndex(q))[0]) <= q / (q - 1));
    worst_shannon = std::max(worst_shannon, std::abs(shannon_grad(ProbDist({pi, 1 - pi}))[0]));
  }
  CHECK(worst_shannon > 10);
}

TEST_CASE("logit-space entropy gradient matches finite differences") {
  Rng rng(26);
  for (int t = 0; t < 100; ++t) {
    const auto z = oracle::random_vector(rng, 2 + rng.below(7), 2.0);
    for (double q : {1.0, 1.1, 1.4, 0.7}) {
      const auto g = entropy_logit_grad(softmax(z), EntropicIndex(q));
      const auto num = finite_diff_grad(
          [&](const Vector& x) { return static_cast<double>(oracle::tsallis(oracle::softmax(x), q)); }, z, 1e-6);
      for (std::size_t i = 0; i < z.size(); ++i) CHECK(oracle::rel_error(g[i], num[i], 1e-4) < 1e-5);
    }
  }
}
