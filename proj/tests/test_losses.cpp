#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dgreid/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dgreid;


TEST_CASE("consistency loss closed forms") {
  Tensor a = Tensor::from_values({1, 2}, {1, 0});
  Tensor b = Tensor::from_values({1, 2}, {0, 1});
  CHECK(consistency_loss(a, b) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(consistency_loss(a, a) == 0.0);

  Tensor c = Tensor::from_values({2, 2}, {3, 0, 0, 4});
  Tensor z({2, 2}, 0.0);
  CHECK(consistency_loss(c, z) == doctest::Approx(3.5).epsilon(1e-12));
  CHECK_THROWS_AS(consistency_loss(c, a), std::invalid_argument);
}

TEST_CASE("consistency loss matches the oracle on fuzzed batches") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 32), d = 1 + uniform_index(rng, 16);
    Tensor a = testing::random_tensor({n, d}, rng), b = testing::random_tensor({n, d}, rng);
    const double v = consistency_loss(a, b);
    CHECK(std::abs(v - oracle::consistency(a, b)) <= 1e-9);
    CHECK(std::abs(v - consistency_loss(b, a)) <= 1e-12);
    CHECK(v >= 0.0);
  }
}

TEST_CASE("consistency gradient matches finite differences") {
  Rng rng(3);
  Tensor a = testing::random_tensor({5, 3}, rng), b = testing::random_tensor({5, 3}, rng);
  const ConsistencyGrad g = consistency_loss_with_grad(a, b);
  CHECK(g.value == doctest::Approx(consistency_loss(a, b)).epsilon(1e-14));
  auto f = [&] { return consistency_loss(a, b); };
  CHECK(testing::max_relative_error(g.grad_j, testing::numeric_gradient(f, a)) < 1e-6);
  CHECK(testing::max_relative_error(g.grad_k, testing::numeric_gradient(f, b)) < 1e-6);
}

TEST_CASE("pair distances") {
  const std::vector<double> origin{0, 0}, far{3, 4}, near{1, 0};
  auto d = pair_distances(origin, origin, far);
  CHECK(d.positive == 0.0);
  CHECK(d.negative == doctest::Approx(5.0).epsilon(1e-12));
  auto swapped = pair_distances(origin, far, near);
  auto straight = pair_distances(origin, near, far);
  CHECK(swapped.positive == straight.negative);
  CHECK(swapped.negative == straight.positive);
  const std::vector<double> short_vec{1};
  CHECK_THROWS_AS(pair_distances(origin, short_vec, far), std::invalid_argument);
}

TEST_CASE("batch-hard triplet loss: fixed cases") {
  // Two tight clusters far apart satisfy the margin everywhere.
  Tensor e = Tensor::from_values({4, 1}, {0.0, 0.1, 10.0, 10.1});
  std::vector<Label> y{0, 0, 1, 1};
  CHECK(batch_hard_triplet_loss(e, y, 0.3) == 0.0);

  // ids (A,A,B,B) at (0, 1, 0.5, 5), m = 0.3. Pinned from the exhaustive oracle.
  Tensor line = Tensor::from_values({4, 1}, {0.0, 1.0, 0.5, 5.0});
  const double expected = oracle::triplet(line, y, 0.3);
  CHECK(expected == doctest::Approx(1.675).epsilon(1e-12));
  CHECK(std::abs(batch_hard_triplet_loss(line, y, 0.3) - 1.675) <= 1e-12);
}

TEST_CASE("batch-hard mining equals exhaustive enumeration on fuzzed batches") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 4 + uniform_index(rng, 29);  // 4..32
    const std::size_t d = 1 + uniform_index(rng, 8);
    const double m = 0.05 + uniform01(rng);
    Tensor e = testing::random_tensor({n, d}, rng);
    const auto y = testing::random_labels(n, rng);

    const double loss = batch_hard_triplet_loss(e, y, m);
    const double oracle = oracle::triplet(e, y, m);
    REQUIRE(std::abs(loss - oracle) <= 1e-9);

    const auto mined = mine_batch_hard(e, y);
    for (std::size_t a = 0; a < n; ++a) {
      double far = -1.0, near = 1e300;
      for (std::size_t j = 0; j < n; ++j) {
        const double dist = oracle::distance(e, a, e, j);
        if (j != a && y[j] == y[a]) far = std::max(far, dist);
        if (y[j] != y[a]) near = std::min(near, dist);
      }
      CHECK(mined[a].anchor == a);
      CHECK(y[mined[a].positive] == y[a]);
      CHECK(y[mined[a].negative] != y[a]);
      CHECK(std::abs(mined[a].d_pos - far) <= 1e-12);
      CHECK(std::abs(mined[a].d_neg - near) <= 1e-12);
    }

    // Bound: 0 <= loss <= m + max pairwise distance.
    double max_dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) max_dist = std::max(max_dist, oracle::distance(e, i, e, j));
    }
    CHECK(loss >= 0.0);
    CHECK(loss <= m + max_dist + 1e-12);
  }
}

TEST_CASE("batch-hard ties resolve to the lowest index") {
  Tensor e = Tensor::from_values({4, 1}, {0.0, 1.0, 1.0, -1.0});
  std::vector<Label> y{0, 0, 1, 1};
  const auto mined = mine_batch_hard(e, y);
  // Anchor 0: negatives 2 and 3 are both at distance 1.
  CHECK(mined[0].negative == 2);
}

TEST_CASE("batch-hard mining rejects undefined batches") {
  Tensor e({3, 2}, 0.5);
  CHECK_THROWS_AS(mine_batch_hard(e, std::vector<Label>{0, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(mine_batch_hard(e, std::vector<Label>{1, 1, 1}), std::invalid_argument);
}

TEST_CASE("triplet gradient matches finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor e = testing::random_tensor({8, 3}, rng);
    const std::vector<Label> y{0, 0, 1, 1, 2, 2, 3, 3};
    const LossAndGrad g = batch_hard_triplet_loss_with_grad(e, y, 0.3);
    CHECK(g.value == doctest::Approx(batch_hard_triplet_loss(e, y, 0.3)).epsilon(1e-14));
    auto f = [&] { return batch_hard_triplet_loss(e, y, 0.3); };
    CHECK(testing::max_relative_error(g.grad, testing::numeric_gradient(f, e)) < 1e-5);
  }
}

TEST_CASE("smoothed cross-entropy closed forms") {
  std::vector<Label> y{3};
  Tensor uniform({1, 10}, 0.1);
  CHECK(smoothed_cross_entropy(uniform, y, 0.0) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Tensor certain({1, 4}, 0.0);
  certain.at(0, 3) = 1.0;
  CHECK(smoothed_cross_entropy(certain, y, 0.0) == 0.0);

  const double e = std::exp(1.0);
  Tensor two = Tensor::from_values({1, 2}, {e / (e + 1), 1 / (e + 1)});
  const double expected = 0.9 * -std::log(e / (e + 1)) + 0.1 * -std::log(1 / (e + 1));
  CHECK(std::abs(smoothed_cross_entropy(two, std::vector<Label>{0}, 0.1) - expected) <= 1e-12);

  CHECK_THROWS_AS(smoothed_cross_entropy(two, std::vector<Label>{2}, 0.1),
                  std::invalid_argument);
}

TEST_CASE("smoothed cross-entropy clamps non-positive probabilities") {
  Tensor p = Tensor::from_values({1, 2}, {1.0, 0.0});
  const double v = smoothed_cross_entropy(p, std::vector<Label>{0}, 0.1);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-0.1 * std::log(1e-12)).epsilon(1e-12));
}

TEST_CASE("smoothed cross-entropy matches the oracle on fuzzed batches") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 16), c = 2 + uniform_index(rng, 20);
    const double eps = uniform01(rng) * 0.5;
    const auto variant = trial % 2 ? SmoothingVariant::kUniform : SmoothingVariant::kOffClass;
    Tensor p = testing::random_probabilities(n, c, rng);
    std::vector<Label> y(n);
    for (auto& l : y) l = uniform_index(rng, c);
    const double v = smoothed_cross_entropy(p, y, eps, variant);
    CHECK(std::abs(v - oracle::smoothed_ce(p, y, eps, variant)) <= 1e-9);

    // The logit form agrees with the probability form.
    Tensor logits({n, c});
    for (std::size_t i = 0; i < p.size(); ++i) logits[i] = std::log(p[i]) + 0.7;
    const LossAndGrad lg = smoothed_cross_entropy_with_logits(logits, y, eps, variant);
    CHECK(std::abs(lg.value - v) <= 1e-9);
  }
}

TEST_CASE("cross-entropy logit gradient matches finite differences") {
  Rng rng(8);
  for (auto variant : {SmoothingVariant::kOffClass, SmoothingVariant::kUniform}) {
    Tensor z = testing::random_tensor({6, 5}, rng);
    const std::vector<Label> y{0, 4, 2, 2, 1, 3};
    const LossAndGrad g = smoothed_cross_entropy_with_logits(z, y, 0.1, variant);
    auto f = [&] { return smoothed_cross_entropy_with_logits(z, y, 0.1, variant).value; };
    CHECK(testing::max_relative_error(g.grad, testing::numeric_gradient(f, z)) < 1e-6);
  }
}

TEST_CASE("total loss") {
  LossWeights w;
  CHECK(w.triplet == 0.2);
  CHECK(w.consistency == 0.01);
  CHECK(w.margin == 0.3);
  CHECK(w.smoothing == 0.1);
  CHECK(total_loss(1.0, 2.0, 3.0, w) == doctest::Approx(1.43).epsilon(1e-14));

  LossWeights zero = w;
  zero.triplet = zero.consistency = 0.0;
  CHECK(total_loss(1.7, 2.0, 3.0, zero) == 1.7);

  LossWeights doubled = w;
  doubled.consistency *= 2.0;
  CHECK(total_loss(1.0, 2.0, 3.0, doubled) ==
        doctest::Approx(total_loss(1.0, 2.0, 3.0, w) + w.consistency * 3.0).epsilon(1e-14));
  CHECK_THROWS_AS(total_loss(-1.0, 0.0, 0.0, w), std::invalid_argument);
}

TEST_CASE("losses are invariant to permuting batch rows") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 12, d = 4, c = 6;
    Tensor e = testing::random_tensor({n, d}, rng), e2 = testing::random_tensor({n, d}, rng);
    const auto y = testing::random_labels(n, rng);
    Tensor p = testing::random_probabilities(n, c, rng);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Label> yp(n);
    for (std::size_t i = 0; i < n; ++i) yp[i] = y[perm[i]];
    const Tensor ep = gather_rows(e, perm), e2p = gather_rows(e2, perm), pp = gather_rows(p, perm);

    CHECK(batch_hard_triplet_loss(ep, yp, 0.3) ==
          doctest::Approx(batch_hard_triplet_loss(e, y, 0.3)).epsilon(1e-12));
    CHECK(consistency_loss(ep, e2p) == doctest::Approx(consistency_loss(e, e2)).epsilon(1e-12));
    CHECK(smoothed_cross_entropy(pp, yp, 0.1) ==
          doctest::Approx(smoothed_cross_entropy(p, y, 0.1)).epsilon(1e-12));
  }
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.margin = 0.0;
  CHECK_THROWS(w.validate());
  w = LossWeights{};
  w.smoothing = 1.0;
  CHECK_THROWS(w.validate());
  w = LossWeights{};
  w.triplet = -0.1;
  CHECK_THROWS(w.validate());
}
