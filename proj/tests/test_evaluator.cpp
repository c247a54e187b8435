#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "dgreid/errors.hpp"
#include "dgreid/evaluator.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dgreid;

namespace {

// Identities 0..ids-1 with `per_id` images each, cameras alternating.
DomainDataset index_dataset(std::size_t ids, std::size_t per_id) {
  DomainDataset d;
  d.name = "eval";
  d.num_identities = ids;
  for (std::size_t i = 0; i < ids; ++i) {
    for (std::size_t k = 0; k < per_id; ++k) {
      ImageSample s;
      s.identity = static_cast<Label>(i);
      s.camera = static_cast<int>(k % 2);
      d.samples.push_back(s);
    }
  }
  return d;
}

EmbeddingMatrix random_embeddings(const DomainDataset& d, std::size_t dim, Rng& rng) {
  EmbeddingMatrix e;
  e.values = testing::random_tensor({d.num_images(), dim}, rng);
  for (const auto& s : d.samples) {
    e.ids.push_back(s.identity);
    e.cameras.push_back(s.camera);
  }
  return e;
}

DomainDataset image_dataset(std::size_t n, std::uint64_t seed) {
  DomainDataset d;
  d.name = "pixels";
  d.num_identities = n;
  Rng rng = make_rng(seed, {0x71});
  std::uniform_int_distribution<int> byte(0, 255);
  for (std::size_t i = 0; i < n; ++i) {
    auto img = std::make_shared<RawImage>(64, 32, 3);
    for (auto& p : img->pixels) p = static_cast<std::uint8_t>(byte(rng));
    ImageSample s;
    s.identity = static_cast<Label>(i);
    s.pixels = img;
    s.path = "img_" + std::to_string(i) + ".png";
    d.samples.push_back(s);
  }
  return d;
}

}  // namespace

TEST_CASE("ranking matches brute force") {
  Rng rng = make_rng(11, {0x72});
  const Tensor probes = testing::random_tensor({100, 6}, rng);
  const Tensor gallery = testing::random_tensor({500, 6}, rng);
  bool all_equal = true;
  for (std::size_t q = 0; q < 100; ++q) {
    all_equal &= rank_gallery(probes.row(q), gallery) == oracle::rank(probes, q, gallery);
  }
  CHECK(all_equal);
}

TEST_CASE("ranking by distance, ties by gallery order") {
  Tensor probe({1, 1}, 0.0);
  Tensor g({2, 1});
  g[0] = 5.0;
  g[1] = 2.0;
  CHECK(rank_gallery(probe.row(0), g) == std::vector<std::size_t>{1, 0});

  Tensor ties({4, 1});
  ties[0] = 1.0;
  ties[1] = -1.0;
  ties[2] = 0.5;
  ties[3] = 1.0;
  CHECK(rank_gallery(probe.row(0), ties) == std::vector<std::size_t>{2, 0, 1, 3});

  Tensor wide({2, 3});
  CHECK_THROWS_AS(rank_gallery(probe.row(0), wide), std::invalid_argument);
}

TEST_CASE("cmc of a hand-built split") {
  // Probe 0 matches first; probe 1's match sits third.
  EmbeddingMatrix e;
  e.values = Tensor({5, 1});
  const double v[] = {0.0, 10.0, 0.1, 10.5, 9.0};
  for (std::size_t i = 0; i < 5; ++i) e.values[i] = v[i];
  e.ids = {0, 1, 0, 1, 2};
  e.cameras = {0, 0, 1, 1, 1};
  SplitSpec split;
  split.probe = {{0, 0}, {1, 1}};
  split.gallery = {{2, 0}, {3, 1}, {4, 2}};
  // Distances for probe 1: 9.9, 0.5, 1.0, so its match comes first too.
  CHECK(compute_cmc(e, split, 0) == std::vector<double>{1.0, 1.0, 1.0});

  e.values[3] = 12.5;  // now 9.9, 2.5, 1.0: match at rank 2
  CHECK(compute_cmc(e, split, 0) == std::vector<double>{0.5, 1.0, 1.0});
  e.values[3] = 20.0;  // 10.0 behind 9.8 and 1.0: match at rank 3
  e.values[2] = 0.2;
  const auto curve = compute_cmc(e, split, 0);
  CHECK(curve == std::vector<double>{0.5, 0.5, 1.0});
  CHECK(curve == oracle::cmc(e, split));
  CHECK(compute_cmc(e, split, 2) == std::vector<double>{0.5, 0.5});

  double ap = 0.0;
  compute_cmc(e, split, 0, false, &ap);
  CHECK(ap == doctest::Approx((1.0 + 1.0 / 3.0) / 2.0).epsilon(1e-12));

  split.probe.push_back({4, 7});
  CHECK_THROWS_AS(compute_cmc(e, split, 0), DataError);
  split.probe.clear();
  CHECK_THROWS_AS(compute_cmc(e, split, 0), DataError);
}

TEST_CASE("cmc fuzz: oracle agreement, monotone, ends at one") {
  const DomainDataset d = index_dataset(40, 3);
  for (std::uint64_t t = 0; t < 50; ++t) {
    Rng rng = make_rng(t, {0x73});
    const EmbeddingMatrix e = random_embeddings(d, 4, rng);
    const SplitSpec split = make_single_shot_split(d, SplitProtocol{"fuzz", 10, 30, false}, t);
    const auto curve = compute_cmc(e, split, 0);
    REQUIRE(curve.size() == 30);
    CHECK(curve == oracle::cmc(e, split));
    for (std::size_t r = 1; r < curve.size(); ++r) CHECK(curve[r] >= curve[r - 1]);
    CHECK(curve.back() == 1.0);
  }
}

TEST_CASE("cmc invariant under scaling and translating the embedding") {
  const DomainDataset d = index_dataset(30, 2);
  Rng rng = make_rng(4, {0x74});
  const EmbeddingMatrix e = random_embeddings(d, 5, rng);
  EmbeddingMatrix moved = e;
  for (std::size_t r = 0; r < moved.values.dim(0); ++r) {
    for (std::size_t c = 0; c < 5; ++c) moved.values.at(r, c) = 4.0 * e.values.at(r, c) + 2.0;
  }
  const SplitSpec split = make_single_shot_split(d, SplitProtocol{"t", 15, 30, false}, 9);
  CHECK(compute_cmc(e, split, 0) == compute_cmc(moved, split, 0));
}

TEST_CASE("cross-camera filtering skips same-camera matches") {
  EmbeddingMatrix e;
  e.values = Tensor({4, 1});
  const double v[] = {0.0, 0.1, 0.2, 5.0};
  for (std::size_t i = 0; i < 4; ++i) e.values[i] = v[i];
  e.ids = {0, 0, 1, 0};
  e.cameras = {0, 0, 1, 1};
  SplitSpec split;
  split.probe = {{0, 0}};
  split.gallery = {{1, 0}, {2, 1}, {3, 0}};
  CHECK(compute_cmc(e, split, 0, false)[0] == 1.0);
  const auto cross = compute_cmc(e, split, 0, true);
  CHECK(cross[0] == 0.0);
  CHECK(cross[1] == 1.0);
}

TEST_CASE("evaluate_embeddings aggregates splits") {
  const DomainDataset d = index_dataset(40, 2);
  Rng rng = make_rng(2, {0x75});
  const EmbeddingMatrix e = random_embeddings(d, 4, rng);
  const SplitProtocol protocol{"t", 20, 20, false};

  const CMCResult one = evaluate_embeddings(e, d, protocol, 1, 17);
  const SplitSpec split = make_single_shot_split(d, protocol, derive_seed(17, {0}));
  CHECK(one.curve == compute_cmc(e, split, 0));
  CHECK(one.mean_rank1 == one.curve[0]);
  CHECK(one.std_rank1 == 0.0);
  CHECK(one.probes == 20);
  CHECK(one.gallery == 20);

  const CMCResult many = evaluate_embeddings(e, d, protocol, 5, 17);
  const CMCResult again = evaluate_embeddings(e, d, protocol, 5, 17);
  CHECK(many.to_json() == again.to_json());
  REQUIRE(many.per_split_rank1.size() == 5);
  const double mean =
      std::accumulate(many.per_split_rank1.begin(), many.per_split_rank1.end(), 0.0) / 5.0;
  double ss = 0.0;
  for (double r : many.per_split_rank1) ss += (r - mean) * (r - mean);
  CHECK(many.mean_rank1 == doctest::Approx(mean).epsilon(1e-12));
  CHECK(many.std_rank1 == doctest::Approx(std::sqrt(ss / 4.0)).epsilon(1e-12));
  CHECK(many.split_seeds[3] == derive_seed(17, {3}));

  const auto j = many.to_json();
  for (const char* key : {"cmc", "rank1", "rank1_std", "per_split_rank1", "map", "split_seeds"}) {
    CHECK(j.contains(key));
  }
  CHECK_THROWS_AS(evaluate_embeddings(e, d, protocol, 0, 17), ConfigError);
}

TEST_CASE("random embeddings score at chance") {
  // Content-independent embeddings, redrawn per trial so that trials are
  // independent: expected rank-1 is 1 / gallery.
  const DomainDataset d = index_dataset(100, 2);
  const std::size_t trials = 200;
  double sum = 0.0, sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = make_rng(t, {0x76});
    const EmbeddingMatrix e = random_embeddings(d, 8, rng);
    const double r1 = evaluate_embeddings(e, d, SplitProtocol{"t", 50, 50, false}, 1, t).mean_rank1;
    sum += r1;
    sq += r1 * r1;
  }
  const double mean = sum / trials;
  const double se = std::sqrt((sq - trials * mean * mean) / (trials - 1) / trials);
  MESSAGE("rank-1 " << mean << " +- " << se);
  CHECK(std::abs(mean - 0.02) <= 3.0 * se);
}

TEST_CASE("embed_dataset") {
  const EpisodicModel model(testing::small_model(), 4, 21);
  const EmbedFn embed = model_embedder(model);
  const Normalization norm;

  DomainDataset d = image_dataset(5, 1);
  d.samples.push_back(d.samples[2]);
  const EmbeddingMatrix one = embed_dataset(d, embed, norm, 64, 32, 1);
  const EmbeddingMatrix wide = embed_dataset(d, embed, norm, 64, 32, 32);
  REQUIRE(one.values.dim(0) == 6);
  CHECK(one.ids[5] == 2);
  double worst = 0.0;
  for (std::size_t i = 0; i < one.values.size(); ++i) {
    worst = std::max(worst, testing::relative_error(one.values[i], wide.values[i]));
  }
  CHECK(worst < 1e-5);
  bool duplicate = true;
  for (std::size_t c = 0; c < one.values.dim(1); ++c) {
    duplicate &= one.values.at(2, c) == one.values.at(5, c);
  }
  CHECK(duplicate);

  DomainDataset empty;
  CHECK(embed_dataset(empty, embed, norm, 64, 32).ids.empty());

  const EmbedFn poisoned = [&](const Tensor& images) {
    Tensor out = embed(images);
    out[0] = std::numeric_limits<double>::quiet_NaN();
    return out;
  };
  try {
    embed_dataset(d, poisoned, norm, 64, 32, 2);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("img_0.png") != std::string::npos);
  }
}
