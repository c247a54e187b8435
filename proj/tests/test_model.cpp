#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dgreid/errors.hpp"
#include "dgreid/model.hpp"
#include "support.hpp"

using namespace dgreid;

namespace {

Tensor fixed_images(std::size_t n, std::size_t h, std::size_t w) {
  Tensor t({n, 3, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::sin(0.37 * static_cast<double>(i));
  return t;
}

double sum_of(const Tensor& t) {
  return std::accumulate(t.values().begin(), t.values().end(), 0.0);
}

std::vector<double> flat_parameters(std::vector<ParamRef> params) {
  std::vector<double> out;
  for (auto& p : params) out.insert(out.end(), p.value->values().begin(), p.value->values().end());
  return out;
}

}  // namespace

TEST_CASE("extractor output shape and duplicate rows") {
  for (bool in : {false, true}) {
    BackboneConfig cfg = BackboneConfig::tiny(64);
    cfg.instance_norm = in;
    FeatureExtractor f(cfg, 1);
    Rng rng(2);
    Tensor x = testing::random_tensor({4, 3, 256, 128}, rng);
    // Row 3 duplicates row 0.
    std::copy(x.data(), x.data() + 3 * 256 * 128, x.data() + 3 * 3 * 256 * 128);
    const Tensor v = f.extract(x);
    CHECK(v.shape() == std::vector<std::size_t>{4, 64});
    for (std::size_t d = 0; d < 64; ++d) CHECK(v.at(0, d) == v.at(3, d));
    CHECK_THROWS_AS(f.extract(Tensor({2, 3, 128, 64})), std::invalid_argument);
  }
}

TEST_CASE("extractor golden checksum") {
  FeatureExtractor f(BackboneConfig::tiny(64), 12345);
  const Tensor v = f.extract(fixed_images(2, 256, 128));
  // Captured once from this implementation and frozen.
  constexpr double kGoldenSum = 3.59417490075195;
  CHECK(sum_of(v) == doctest::Approx(kGoldenSum).epsilon(1e-9));
}

TEST_CASE("extractors are seed-deterministic") {
  const BackboneConfig cfg = testing::micro_backbone(true);
  FeatureExtractor a(cfg, 7), b(cfg, 7), c(cfg, 8);
  const Tensor x = fixed_images(3, 16, 8);
  CHECK(a.extract(x).values()[0] == b.extract(x).values()[0]);
  CHECK(flat_parameters(a.parameters()) == flat_parameters(b.parameters()));
  CHECK(flat_parameters(a.parameters()) != flat_parameters(c.parameters()));
}

TEST_CASE("residual backbone composes with the encoder") {
  BackboneConfig cfg = BackboneConfig::resnet50();
  cfg.resnet_base_width = 2;
  cfg.feature_dim = 64;
  cfg.resnet_blocks = {1, 1, 1, 1};
  cfg.input_height = 64;
  cfg.input_width = 32;
  FeatureExtractor f(cfg, 3);
  const Tensor v = f.extract(fixed_images(2, 64, 32));
  CHECK(v.shape() == std::vector<std::size_t>{2, 64});
  Encoder e(64, 8, 4);
  Classifier c(8, 5, 5);
  CHECK(c.classify(e.encode(v)).shape() == std::vector<std::size_t>{2, 5});

  cfg.feature_dim = 60;
  CHECK_THROWS_AS(FeatureExtractor(cfg, 3), ConfigError);
  CHECK_THROWS_AS(backbone_kind_from_string("vgg"), ConfigError);
  CHECK(backbone_kind_from_string(to_string(BackboneKind::kResNet50)) == BackboneKind::kResNet50);
}

TEST_CASE("encoder identity configuration") {
  Encoder e(4, 4, 1);
  auto& fc1 = dynamic_cast<Linear&>(e.network().layer(0));
  auto& fc2 = dynamic_cast<Linear&>(e.network().layer(3));
  for (Linear* fc : {&fc1, &fc2}) {
    fc->weight().fill(0.0);
    for (std::size_t i = 0; i < 4; ++i) fc->weight().at(i, i) = 1.0;
    fc->bias().fill(0.0);
  }
  // Unit batch-norm (gamma 1, beta 0, running mean 0, var 1) in inference:
  // E(x) = relu(x) / (1 + eps).
  const Tensor x = Tensor::from_values({2, 4}, {1.0, -2.0, 0.5, 3.0, -1.0, 0.0, 2.0, -0.25});
  const Tensor v = e.encode(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(v[i] == doctest::Approx(std::max(x[i], 0.0) / (1.0 + 1e-5)).epsilon(1e-12));
  }
}

TEST_CASE("encoder zero input and shapes") {
  Encoder e(16, 8, 2);
  const Tensor zero = e.encode(Tensor({3, 16}, 0.0));
  for (double z : zero.values()) CHECK(z == 0.0);
  Rng rng(1);
  CHECK(e.encode(testing::random_tensor({7, 16}, rng)).shape() ==
        std::vector<std::size_t>{7, 8});
  CHECK_THROWS_AS(e.encode(Tensor({3, 15})), std::invalid_argument);
}

TEST_CASE("classifier probabilities") {
  Classifier c(4, 5, 1);
  c.layer().weight().fill(0.0);
  c.layer().bias().fill(0.0);
  Rng rng(3);
  const Tensor p = c.classify(testing::random_tensor({3, 4}, rng));
  for (double v : p.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

  Classifier d(4, 6, 2);
  const Tensor emb = testing::random_tensor({5, 4}, rng);
  const Tensor probs = d.classify(emb);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 6; ++k) {
      CHECK(probs.at(r, k) >= 0.0);
      s += probs.at(r, k);
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }

  Tensor z = d.logits(emb);
  Tensor shifted = z;
  for (double& v : shifted.values()) v += 123.0;
  const Tensor a = softmax_rows(z), b = softmax_rows(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  const Tensor two = softmax_rows(Tensor::from_values({1, 2}, {1.0, 0.0}));
  const double e = std::exp(1.0);
  CHECK(two[0] == doctest::Approx(e / (e + 1)).epsilon(1e-14));
  CHECK(two[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-14));
  CHECK(two[0] == doctest::Approx(0.7311).epsilon(1e-4));

  CHECK_THROWS_AS(d.logits(Tensor({2, 3})), std::invalid_argument);
}

TEST_CASE("frozen view matches the unfrozen forward") {
  FeatureExtractor f(testing::micro_backbone(false), 9);
  const FeatureExtractor copy = f;
  const FrozenExtractor frozen = freeze(std::move(f));
  const Tensor x = fixed_images(4, 16, 8);
  const Tensor a = frozen.extract(x), b = copy.extract(x);
  CHECK(a.values().size() == b.values().size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(frozen.feature_dim() == 8);
}

TEST_CASE("state roundtrip and mismatch errors") {
  Encoder a(8, 4, 1), b(8, 4, 2);
  b.load_state(a.state());
  Rng rng(4);
  const Tensor x = testing::random_tensor({3, 8}, rng);
  CHECK(a.encode(x).values()[5] == b.encode(x).values()[5]);

  Encoder wrong(8, 5, 1);
  CHECK_THROWS_AS(wrong.load_state(a.state()), CheckpointError);
  NamedTensors partial = a.state();
  partial.erase(partial.begin());
  CHECK_THROWS_AS(b.load_state(partial), CheckpointError);
}
