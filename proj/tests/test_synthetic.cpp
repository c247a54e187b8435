#include <cmath>
#include <set>

#include "doctest.h"
#include "dgreid/errors.hpp"
#include "dgreid/synthetic.hpp"
#include "support.hpp"

using namespace dgreid;
namespace fs = std::filesystem;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.height = 64;
  c.width = 32;
  c.target_ids = 10;
  return c;
}

double mean_abs_diff(const RawImage& a, const RawImage& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    s += std::abs(static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]));
  }
  return s / static_cast<double>(a.pixels.size());
}

}  // namespace

TEST_CASE("synthetic counts and disjoint identity spaces") {
  const SyntheticData data = generate_synthetic_domains(small_config(), 0);
  REQUIRE(data.sources.size() == 3);
  REQUIRE(data.targets.size() == 1);
  std::size_t images = 0;
  std::set<int> domain_ids;
  for (const auto& d : data.sources) {
    CHECK(d.num_identities == 20);
    CHECK(d.num_images() == 160);
    CHECK_NOTHROW(d.validate());
    images += d.num_images();
    domain_ids.insert(d.domain_id);
  }
  CHECK(images == 480);
  CHECK(domain_ids.size() == 3);
  CHECK(data.targets[0].num_images() == 40);
  const SourceCollection coll = make_collection(data.sources);
  CHECK(coll.label_map.total_identities == 60);
  CHECK(coll.total_images() == 480);
  const auto& px = *data.sources[0].samples[0].pixels;
  CHECK(px.height == 64);
  CHECK(px.width == 32);
  CHECK(px.channels == 3);
}

TEST_CASE("synthetic generation is seed-deterministic") {
  const SyntheticData a = generate_synthetic_domains(small_config(), 5);
  const SyntheticData b = generate_synthetic_domains(small_config(), 5);
  const SyntheticData c = generate_synthetic_domains(small_config(), 6);
  bool all_equal = true, any_diff = false;
  for (std::size_t d = 0; d < a.sources.size(); ++d) {
    for (std::size_t i = 0; i < a.sources[d].num_images(); ++i) {
      all_equal &= a.sources[d].samples[i].pixels->pixels == b.sources[d].samples[i].pixels->pixels;
      any_diff |= a.sources[d].samples[i].pixels->pixels != c.sources[d].samples[i].pixels->pixels;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("synthetic domain gap exceeds the identity gap") {
  // Same archetype and nuisance under two domain styles, against two
  // archetypes under the same style.
  const std::size_t pairs = 20;
  double cross_domain = 0.0, within_domain = 0.0;
  for (std::size_t n = 0; n < pairs; ++n) {
    Rng rng = make_rng(3, {n});
    const IdentityArchetype a = random_archetype(rng), b = random_archetype(rng);
    const Nuisance nuis = random_nuisance(rng, 0);
    const DomainStyle s0 = domain_style(3, 0, 4), s1 = domain_style(3, 1 + n % 3, 4);
    const RawImage a0 = render_figure(a, s0, nuis, 128, 64);
    cross_domain += mean_abs_diff(a0, render_figure(a, s1, nuis, 128, 64));
    within_domain += mean_abs_diff(a0, render_figure(b, s0, nuis, 128, 64));
  }
  MESSAGE("cross-domain " << cross_domain / pairs << ", within-domain " << within_domain / pairs);
  CHECK(cross_domain > within_domain);
}

TEST_CASE("synthetic data on disk") {
  const auto dir = testing::scratch_dir("synthetic_disk");
  SyntheticConfig cfg = small_config();
  cfg.ids_per_domain = 3;
  cfg.images_per_id = 2;
  cfg.target_ids = 3;
  cfg.target_images_per_id = 2;
  SyntheticData data = generate_synthetic_domains(cfg, 1);
  const auto summary = write_synthetic(data, dir);
  REQUIRE(summary.size() == 4);
  CHECK(summary[0].role == "source");
  CHECK(summary[3].role == "target");
  CHECK(summary[0].images == 6);
  CHECK(summary[0].cameras == 2);
  CHECK(fs::exists(dir / "synthetic.json"));
  CHECK(fs::exists(dir / "domain_0" / "id_0" / "img_0.png"));

  DomainDataset loaded = load_domain(dir / "domain_1" / "manifest.csv", 1);
  CHECK(loaded.num_identities == 3);
  CHECK(loaded.num_images() == 6);
  loaded.load_pixels();
  for (std::size_t i = 0; i < loaded.num_images(); ++i) {
    CHECK(loaded.samples[i].pixels->pixels == data.sources[1].samples[i].pixels->pixels);
  }
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig c = small_config();
  c.images_per_id = 1;
  CHECK_THROWS_AS(generate_synthetic_domains(c, 0), DataError);
  c = small_config();
  c.ids_per_domain = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
