#include "dgreid/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"
#include "dgreid/errors.hpp"

namespace dgreid {

namespace fs = std::filesystem;

void SyntheticConfig::validate() const {
  if (source_domains < 1) throw ConfigError("synthetic: need at least one source domain");
  if (ids_per_domain < 2 || target_ids < 2) {
    throw ConfigError("synthetic: every domain needs at least 2 identities");
  }
  if (images_per_id < 2 || target_images_per_id < 2) {
    throw DataError("synthetic: identities need at least 2 images each");
  }
  if (height < 32 || width < 16) throw ConfigError("synthetic: image size too small");
}

namespace {

Rgb random_color(Rng& rng) {
  return {uniform01(rng), uniform01(rng), uniform01(rng)};
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

// Rotation about the (1,1,1) axis followed by saturation scaling.
Rgb apply_hue(const Rgb& c, double angle, double saturation) {
  const double cs = std::cos(angle), sn = std::sin(angle);
  const double k = (1.0 - cs) / 3.0, r = std::sqrt(1.0 / 3.0) * sn;
  const Rgb rot{c[0] * (cs + k) + c[1] * (k - r) + c[2] * (k + r),
                c[0] * (k + r) + c[1] * (cs + k) + c[2] * (k - r),
                c[0] * (k - r) + c[1] * (k + r) + c[2] * (cs + k)};
  const double gray = (rot[0] + rot[1] + rot[2]) / 3.0;
  return {gray + (rot[0] - gray) * saturation, gray + (rot[1] - gray) * saturation,
          gray + (rot[2] - gray) * saturation};
}

bool in_rect(double x, double y, double x0, double y0, double x1, double y1) {
  return x >= x0 && x < x1 && y >= y0 && y < y1;
}

}  // namespace

IdentityArchetype random_archetype(Rng& rng) {
  IdentityArchetype a;
  a.shirt = random_color(rng);
  a.pants = random_color(rng);
  a.accent = random_color(rng);
  a.bag = random_color(rng);
  const double tone = 0.35 + 0.5 * uniform01(rng);
  a.skin = {tone, tone * 0.8, tone * 0.65};
  a.pattern = static_cast<int>(uniform_index(rng, 5));
  a.bag_side = static_cast<int>(uniform_index(rng, 3)) - 1;
  a.body_width = 0.8 + 0.4 * uniform01(rng);
  a.leg_length = 0.85 + 0.3 * uniform01(rng);
  return a;
}

DomainStyle domain_style(std::uint64_t seed, std::size_t index, std::size_t count) {
  Rng rng = make_rng(seed, {0x57, index});
  DomainStyle s;
  const double base = 2.0 * std::numbers::pi * static_cast<double>(index) /
                      static_cast<double>(std::max<std::size_t>(count, 1));
  s.hue_rotation = base + 0.3 * (uniform01(rng) - 0.5);
  s.saturation = 0.6 + 0.7 * uniform01(rng);
  s.contrast = 0.7 + 0.6 * uniform01(rng);
  s.brightness = 0.2 * (uniform01(rng) - 0.5);
  s.background_a = random_color(rng);
  s.background_b = random_color(rng);
  s.floor = random_color(rng);
  s.stripe_frequency = 2.0 + 6.0 * uniform01(rng);
  s.stripe_angle = std::numbers::pi * uniform01(rng);
  s.noise_sigma = 0.01 + 0.05 * uniform01(rng);
  return s;
}

Nuisance random_nuisance(Rng& rng, int camera) {
  Nuisance n;
  n.shift_x = 16.0 * (uniform01(rng) - 0.5);
  n.shift_y = 12.0 * (uniform01(rng) - 0.5);
  n.scale = 0.9 + 0.2 * uniform01(rng);
  n.stride = uniform01(rng);
  n.background_phase = 2.0 * std::numbers::pi * uniform01(rng);
  n.illumination = (camera % 2 == 0 ? 1.0 : 0.85) * (0.9 + 0.2 * uniform01(rng));
  n.noise_seed = rng();
  return n;
}

RawImage render_figure(const IdentityArchetype& a, const DomainStyle& style,
                       const Nuisance& n, std::size_t height, std::size_t width) {
  RawImage img(height, width, 3);
  const double hs = static_cast<double>(height) / 256.0;
  const double ws = static_cast<double>(width) / 128.0;
  const double s = n.scale;
  const double cx = 64.0 * ws + n.shift_x * ws;
  const double top = 24.0 * hs + n.shift_y * hs;
  const double unit_y = hs * s, unit_x = ws * s;

  const double head_r = 14.0 * unit_x;
  const double head_cy = top + 14.0 * unit_y;
  const double torso_top = top + 30.0 * unit_y;
  const double torso_bot = top + 120.0 * unit_y;
  const double torso_half = 22.0 * unit_x * a.body_width;
  const double leg_bot = torso_bot + 90.0 * unit_y * a.leg_length;
  const double leg_w = 15.0 * unit_x;
  const double leg_gap = (2.0 + 10.0 * n.stride) * unit_x;
  const double floor_y = 0.82 * static_cast<double>(height);

  Rng noise = Rng(n.noise_seed);
  const double freq = style.stripe_frequency / static_cast<double>(width);
  const double ca = std::cos(style.stripe_angle), sa = std::sin(style.stripe_angle);

  for (std::size_t yi = 0; yi < height; ++yi) {
    for (std::size_t xi = 0; xi < width; ++xi) {
      const double x = static_cast<double>(xi) + 0.5;
      const double y = static_cast<double>(yi) + 0.5;
      Rgb c;
      if (y >= floor_y) {
        c = style.floor;
      } else {
        const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq *
                                                  (x * ca + y * sa) +
                                              n.background_phase);
        c = mix(style.background_a, style.background_b, t);
      }

      const double dxh = x - cx, dyh = y - head_cy;
      if (dxh * dxh + dyh * dyh <= head_r * head_r) {
        c = a.skin;
      } else if (in_rect(x, y, cx - torso_half, torso_top, cx + torso_half, torso_bot)) {
        c = a.shirt;
        const double ty = (y - torso_top) / (torso_bot - torso_top);
        switch (a.pattern) {
          case 1:
            if (static_cast<int>((y - torso_top) / (12.0 * unit_y)) % 2 == 1) c = a.accent;
            break;
          case 2:
            if (std::abs(x - cx) < 5.0 * unit_x) c = a.accent;
            break;
          case 3:
            if (ty > 0.15 && ty < 0.45 && std::abs(x - cx) < 9.0 * unit_x) c = a.accent;
            break;
          case 4:
            if (ty > 0.5) c = a.accent;
            break;
          default:
            break;
        }
      } else if (in_rect(x, y, cx - leg_gap / 2 - leg_w, torso_bot, cx - leg_gap / 2,
                         leg_bot) ||
                 in_rect(x, y, cx + leg_gap / 2, torso_bot, cx + leg_gap / 2 + leg_w,
                         leg_bot)) {
        c = a.pants;
      } else if (a.bag_side != 0) {
        const double bx0 = a.bag_side < 0 ? cx - torso_half - 14.0 * unit_x
                                          : cx + torso_half;
        if (in_rect(x, y, bx0, torso_top + 40.0 * unit_y, bx0 + 14.0 * unit_x,
                    torso_top + 80.0 * unit_y)) {
          c = a.bag;
        }
      }

      c = {c[0] * n.illumination, c[1] * n.illumination, c[2] * n.illumination};
      c = apply_hue(c, style.hue_rotation, style.saturation);
      for (std::size_t k = 0; k < 3; ++k) {
        double v = (c[k] - 0.5) * style.contrast + 0.5 + style.brightness;
        v += normal(noise, 0.0, style.noise_sigma);
        img.at(yi, xi, k) =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

SyntheticData generate_synthetic_domains(const SyntheticConfig& config,
                                         std::uint64_t seed) {
  config.validate();
  const std::size_t total = config.source_domains + config.target_domains;
  SyntheticData data;
  for (std::size_t d = 0; d < total; ++d) {
    const bool source = d < config.source_domains;
    const std::size_t ids = source ? config.ids_per_domain : config.target_ids;
    const std::size_t per_id = source ? config.images_per_id : config.target_images_per_id;
    const DomainStyle style = domain_style(seed, d, total);

    DomainDataset ds;
    ds.domain_id = static_cast<int>(d);
    ds.name = "domain_" + std::to_string(d);
    ds.num_identities = ids;
    ds.samples.resize(ids * per_id);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t id = 0; id < ids; ++id) {
      Rng id_rng = make_rng(seed, {0xA7, d, id});
      const IdentityArchetype arch = random_archetype(id_rng);
      for (std::size_t m = 0; m < per_id; ++m) {
        const int camera = static_cast<int>(m % 2);
        Rng img_rng = make_rng(seed, {0x1A, d, id, m});
        const Nuisance nuis = random_nuisance(img_rng, camera);
        ImageSample& s = ds.samples[id * per_id + m];
        s.identity = id;
        s.original_identity = static_cast<long>(id);
        s.camera = camera;
        s.domain = static_cast<int>(d);
        s.pixels = std::make_shared<const RawImage>(
            render_figure(arch, style, nuis, config.height, config.width));
      }
    }
    (source ? data.sources : data.targets).push_back(std::move(ds));
  }
  return data;
}

std::vector<DomainSummary> write_synthetic(SyntheticData& data, const fs::path& root) {
  fs::create_directories(root);
  std::vector<DomainSummary> summary;
  nlohmann::json index = {{"sources", nlohmann::json::array()},
                          {"targets", nlohmann::json::array()}};
  auto write_domain = [&](DomainDataset& ds, const char* role) {
    const fs::path dir = root / ("domain_" + std::to_string(ds.domain_id));
    std::vector<std::size_t> counter(ds.num_identities, 0);
    for (auto& s : ds.samples) {
      const fs::path id_dir = dir / ("id_" + std::to_string(s.original_identity));
      s.path = id_dir / ("img_" + std::to_string(counter[s.identity]++) + ".png");
    }
    for (std::size_t id = 0; id < ds.num_identities; ++id) {
      fs::create_directories(dir / ("id_" + std::to_string(id)));
    }
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      write_png(ds.samples[i].path, *ds.samples[i].pixels);
    }
    write_manifest(dir / "manifest.csv", ds);
    std::set<int> cams;
    for (const auto& s : ds.samples) cams.insert(s.camera);
    summary.push_back({ds.name, role, ds.num_identities, ds.num_images(), cams.size()});
    index[std::string(role) + "s"].push_back(
        {{"domain_id", ds.domain_id},
         {"manifest", (fs::path("domain_" + std::to_string(ds.domain_id)) / "manifest.csv")
                          .generic_string()}});
  };
  for (auto& d : data.sources) write_domain(d, "source");
  for (auto& d : data.targets) write_domain(d, "target");
  std::ofstream out(root / "synthetic.json");
  out << index.dump(2) << '\n';
  return summary;
}

}  // namespace dgreid
