#pragma once

// Seeded generator of multi-domain pedestrian-like images. Identities are
// rendered "figures" with a per-identity clothing signature; each domain
// applies its own global style (hue rotation, saturation, contrast,
// background texture, sensor noise), so a domain gap exists by construction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dgreid/data.hpp"

namespace dgreid {

struct SyntheticConfig {
  std::size_t source_domains = 3;
  std::size_t ids_per_domain = 20;
  std::size_t images_per_id = 8;
  std::size_t target_domains = 1;
  std::size_t target_ids = 50;
  std::size_t target_images_per_id = 4;
  std::size_t height = kImageHeight;
  std::size_t width = kImageWidth;

  void validate() const;
};

using Rgb = std::array<double, 3>;

struct IdentityArchetype {
  Rgb shirt{}, pants{}, skin{}, accent{}, bag{};
  int pattern = 0;  // 0 solid, 1 stripes, 2 center stripe, 3 emblem, 4 two-tone
  int bag_side = 0;  // -1 left, 0 none, 1 right
  double body_width = 1.0;
  double leg_length = 1.0;
};

struct DomainStyle {
  double hue_rotation = 0.0;  // radians around the gray axis
  double saturation = 1.0;
  double contrast = 1.0;
  double brightness = 0.0;
  Rgb background_a{}, background_b{}, floor{};
  double stripe_frequency = 4.0;
  double stripe_angle = 0.0;
  double noise_sigma = 0.02;
};

struct Nuisance {
  double shift_x = 0.0;
  double shift_y = 0.0;
  double scale = 1.0;
  double stride = 0.0;  // leg separation
  double background_phase = 0.0;
  double illumination = 1.0;
  std::uint64_t noise_seed = 0;
};

IdentityArchetype random_archetype(Rng& rng);
// Style for domain `index` of `count`; hue rotations are spread evenly so
// every domain, including held-out ones, has a distinct look.
DomainStyle domain_style(std::uint64_t seed, std::size_t index, std::size_t count);
Nuisance random_nuisance(Rng& rng, int camera);

RawImage render_figure(const IdentityArchetype& archetype, const DomainStyle& style,
                       const Nuisance& nuisance, std::size_t height = kImageHeight,
                       std::size_t width = kImageWidth);

struct SyntheticData {
  std::vector<DomainDataset> sources;
  std::vector<DomainDataset> targets;
};

SyntheticData generate_synthetic_domains(const SyntheticConfig& config,
                                         std::uint64_t seed);

struct DomainSummary {
  std::string name;
  std::string role;  // "source" / "target"
  std::size_t identities = 0;
  std::size_t images = 0;
  std::size_t cameras = 0;
};

// Writes domain_<k>/id_<n>/img_<m>.png plus domain_<k>/manifest.csv and an
// index file `synthetic.json` listing source and target manifests. Updates
// the sample paths in `data`.
std::vector<DomainSummary> write_synthetic(SyntheticData& data,
                                           const std::filesystem::path& root);

}  // namespace dgreid
