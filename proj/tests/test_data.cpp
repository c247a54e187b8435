#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "dgreid/data.hpp"
#include "dgreid/errors.hpp"
#include "support.hpp"

using namespace dgreid;
namespace fs = std::filesystem;

namespace {

void touch(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream{p};
}

// Manifest with counts[i] images of identity original[i]; image files are empty.
fs::path write_touched_manifest(const fs::path& dir, const std::vector<long>& original,
                                const std::vector<std::size_t>& counts) {
  std::ofstream out(dir / "manifest.csv");
  out << "path,identity,camera\n";
  for (std::size_t i = 0; i < original.size(); ++i) {
    for (std::size_t m = 0; m < counts[i]; ++m) {
      const std::string rel = "img/" + std::to_string(original[i]) + "_" + std::to_string(m) + ".png";
      touch(dir / rel);
      out << rel << "," << original[i] << "," << (m % 6) << "\n";
    }
  }
  return dir / "manifest.csv";
}

DomainDataset in_memory(int domain, std::vector<std::size_t> images_per_id) {
  DomainDataset ds;
  ds.domain_id = domain;
  ds.num_identities = images_per_id.size();
  for (std::size_t id = 0; id < images_per_id.size(); ++id) {
    for (std::size_t m = 0; m < images_per_id[id]; ++m) {
      ImageSample s;
      s.identity = id;
      s.camera = static_cast<int>(m % 2);
      s.domain = domain;
      ds.samples.push_back(s);
    }
  }
  return ds;
}

RawImage constant_image(std::size_t h, std::size_t w, std::uint8_t v) {
  RawImage img(h, w, 3);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

void check_split_invariants(const DomainDataset& ds, const SplitSpec& s) {
  std::set<std::size_t> probe_imgs, gallery_imgs;
  std::set<Label> probe_ids;
  for (const auto& e : s.probe) {
    probe_imgs.insert(e.index);
    probe_ids.insert(e.identity);
    CHECK(ds.samples[e.index].identity == e.identity);
  }
  for (const auto& e : s.gallery) {
    gallery_imgs.insert(e.index);
    CHECK(ds.samples[e.index].identity == e.identity);
  }
  CHECK(probe_imgs.size() == s.probe.size());
  CHECK(gallery_imgs.size() == s.gallery.size());
  CHECK(probe_ids.size() == s.probe.size());
  for (std::size_t i : probe_imgs) CHECK(gallery_imgs.count(i) == 0);
  for (Label id : probe_ids) {
    std::size_t matches = 0;
    for (const auto& e : s.gallery) matches += e.identity == id;
    CHECK(matches == 1);
  }
}

}  // namespace

TEST_CASE("load_domain: small manifest") {
  const auto dir = testing::scratch_dir("manifest_small");
  const auto path = write_touched_manifest(dir, {7, 42}, {3, 3});
  const DomainDataset ds = load_domain(path, 2);
  CHECK(ds.num_identities == 2);
  CHECK(ds.num_images() == 6);
  CHECK(ds.domain_id == 2);
  // Sparse ids are re-densified; the originals are kept.
  CHECK(ds.samples[0].identity == 0);
  CHECK(ds.samples[3].identity == 1);
  CHECK(ds.samples[3].original_identity == 42);
  CHECK(ds.samples[0].domain == 2);
}

TEST_CASE("load_domain: single-image identity is rejected") {
  const auto dir = testing::scratch_dir("manifest_single");
  const auto path = write_touched_manifest(dir, {0, 1}, {3, 1});
  CHECK_THROWS_AS(load_domain(path, 0), DataError);
}

TEST_CASE("load_domain: parse errors carry the line number") {
  const auto dir = testing::scratch_dir("manifest_bad");
  touch(dir / "a.png");
  {
    std::ofstream out(dir / "manifest.csv");
    out << "path,identity,camera\na.png,0,1\na.png,zero,1\n";
  }
  try {
    load_domain(dir / "manifest.csv", 0);
    FAIL("expected a parse error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("manifest.csv:3") != std::string::npos);
  }

  {
    std::ofstream out(dir / "manifest.csv");
    out << "path,identity,camera\na.png,0\n";
  }
  CHECK_THROWS_WITH_AS(load_domain(dir / "manifest.csv", 0),
                       doctest::Contains("manifest.csv:2"), DataError);

  {
    std::ofstream out(dir / "manifest.csv");
    out << "file,id\n";
  }
  CHECK_THROWS_WITH_AS(load_domain(dir / "manifest.csv", 0),
                       doctest::Contains("manifest.csv:1"), DataError);
}

TEST_CASE("load_domain: missing image names the path") {
  const auto dir = testing::scratch_dir("manifest_missing");
  {
    std::ofstream out(dir / "manifest.csv");
    out << "path,identity,camera\nnowhere.png,0,0\n";
  }
  CHECK_THROWS_WITH_AS(load_domain(dir / "manifest.csv", 0), doctest::Contains("nowhere.png"),
                       DataError);
  CHECK_THROWS_AS(load_domain(dir / "absent.csv", 0), DataError);
}

TEST_CASE("load_domain: Market1501-sized layout") {
  // 1501 identities, 29419 images: 900 ids with 20 images, 601 with 19.
  const auto dir = testing::scratch_dir("manifest_market");
  std::vector<long> ids(1501);
  std::vector<std::size_t> counts(1501);
  for (std::size_t i = 0; i < 1501; ++i) {
    ids[i] = static_cast<long>(2 * i + 1);
    counts[i] = i < 900 ? 20 : 19;
  }
  const auto path = write_touched_manifest(dir, ids, counts);
  const DomainDataset ds = load_domain(path, 0);
  CHECK(ds.num_identities == 1501);
  CHECK(ds.num_images() == 29419);
  fs::remove_all(dir);
}

TEST_CASE("manifest write / load roundtrip") {
  const auto dir = testing::scratch_dir("manifest_roundtrip");
  const auto first = load_domain(write_touched_manifest(dir, {3, 5, 9}, {2, 4, 3}), 1);
  write_manifest(dir / "copy.csv", first);
  const auto second = load_domain(dir / "copy.csv", 1);
  REQUIRE(second.num_images() == first.num_images());
  for (std::size_t i = 0; i < first.num_images(); ++i) {
    CHECK(second.samples[i].path == first.samples[i].path);
    CHECK(second.samples[i].identity == first.samples[i].identity);
    CHECK(second.samples[i].camera == first.samples[i].camera);
  }
}

TEST_CASE("dataset validation") {
  CHECK_NOTHROW(in_memory(0, {2, 3}).validate());
  CHECK_THROWS_AS(in_memory(0, {2, 1}).validate(), DataError);
  DomainDataset gap = in_memory(0, {2, 2});
  gap.num_identities = 3;
  CHECK_THROWS_AS(gap.validate(), DataError);
}

TEST_CASE("global label map") {
  std::vector<DomainDataset> d{in_memory(0, {2, 2, 2}), in_memory(1, std::vector<std::size_t>(5, 2)),
                               in_memory(2, {2, 2})};
  const GlobalLabelMap m = build_label_map(d);
  CHECK(m.offsets.at(0) == 0);
  CHECK(m.offsets.at(1) == 3);
  CHECK(m.offsets.at(2) == 8);
  CHECK(m.total_identities == 10);

  const GlobalLabelMap single = build_label_map({in_memory(4, {2, 2, 2, 2})});
  CHECK(single.offsets.at(4) == 0);
  CHECK(single.total_identities == 4);

  // Offsets follow domain-id order, not list order.
  const GlobalLabelMap reversed = build_label_map({d[2], d[1], d[0]});
  CHECK(reversed.offsets == m.offsets);

  CHECK_THROWS_AS(build_label_map({d[0], d[0]}), DataError);
  CHECK_THROWS_AS(build_label_map({}), DataError);
  CHECK_THROWS_AS(m.global(9, 0), std::out_of_range);
}

TEST_CASE("label map for the four source datasets") {
  std::vector<DomainDataset> d;
  int id = 0;
  for (std::size_t ids : {1501, 1812, 1816, 1467}) {
    DomainDataset ds;
    ds.domain_id = id++;
    ds.num_identities = ids;
    d.push_back(ds);
  }
  CHECK(build_label_map(d).total_identities == 6596);
}

TEST_CASE("label map is injective") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DomainDataset> d;
    const int domains = 1 + static_cast<int>(uniform_index(rng, 5));
    for (int k = 0; k < domains; ++k) {
      d.push_back(in_memory(k * 3, std::vector<std::size_t>(1 + uniform_index(rng, 7), 2)));
    }
    const GlobalLabelMap m = build_label_map(d);
    std::set<Label> seen;
    std::size_t pairs = 0;
    for (const auto& ds : d) {
      for (Label l = 0; l < ds.num_identities; ++l, ++pairs) {
        const Label g = m.global(ds.domain_id, l);
        CHECK(g < m.total_identities);
        seen.insert(g);
      }
    }
    CHECK(seen.size() == pairs);
    CHECK(m.total_identities == pairs);
  }
}

TEST_CASE("preprocess") {
  RawImage big = constant_image(300, 200, 9);
  const Image out = preprocess(big, Normalization{});
  CHECK(out.height == 256);
  CHECK(out.width == 128);
  CHECK(out.channels == 3);
  CHECK(out.values.size() == 256 * 128 * 3);

  // Identity normalization on an already-sized image only rescales.
  Rng rng(3);
  RawImage sized(256, 128, 3);
  for (auto& p : sized.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
  const Image same = preprocess(sized, Normalization::identity());
  for (std::size_t i = 0; i < same.values.size(); ++i) {
    REQUIRE(same.values[i] == doctest::Approx(sized.pixels[i] / 255.0).epsilon(1e-12));
  }

  // Constant image: (c / 255 - m) / s per channel.
  const Normalization norm{{0.5, 0.25, 0.1}, {0.2, 0.4, 0.8}};
  const Image flat = preprocess(constant_image(97, 41, 200), norm);
  for (std::size_t c = 0; c < 3; ++c) {
    const double expected = (200.0 / 255.0 - norm.mean[c]) / norm.stddev[c];
    CHECK(flat.at(0, 0, c) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(flat.at(255, 127, c) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(flat.at(100, 60, c) == doctest::Approx(expected).epsilon(1e-12));
  }

  CHECK_THROWS_AS(preprocess(RawImage(10, 10, 1), norm), DataError);
  CHECK_THROWS_AS(preprocess(RawImage(10, 10, 4), norm), DataError);
}

TEST_CASE("augmentation") {
  Rng fill(4);
  RawImage raw(256, 128, 3);
  for (auto& p : raw.pixels) p = static_cast<std::uint8_t>(uniform_index(fill, 256));
  const Image img = preprocess(raw, Normalization{});

  Rng a(99), b(99);
  const Image x = augment(img, a), y = augment(img, b);
  CHECK(x.values == y.values);
  CHECK(x.height == 256);
  CHECK(x.width == 128);

  // Offset (pad, pad) without flip is the identity crop.
  CHECK(crop_and_flip(img, 10, 10, 10, false).values == img.values);
  // Flip twice restores the image.
  const Image f = crop_and_flip(img, 10, 10, 10, true);
  CHECK(f.at(5, 0, 1) == img.at(5, 127, 1));
  CHECK(crop_and_flip(f, 10, 10, 10, true).values == img.values);
  // Offset (0, 0) shifts content down-right by the padding; the border is zero.
  const Image shifted = crop_and_flip(img, 10, 0, 0, false);
  CHECK(shifted.at(0, 0, 0) == 0.0);
  CHECK(shifted.at(20, 30, 2) == img.at(10, 20, 2));
  CHECK_THROWS_AS(crop_and_flip(img, 10, 21, 0, false), std::invalid_argument);
}

TEST_CASE("augmentation flip frequency") {
  // A 1x2 image with distinct columns reveals the flip; no padding.
  Image tiny{1, 2, 3, {1, 1, 1, 2, 2, 2}};
  Rng rng(7);
  const AugmentConfig no_crop{0.5, 0};
  const std::size_t draws = 10000;
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < draws; ++i) flipped += augment(tiny, rng, no_crop).at(0, 0, 0) == 2.0;
  CHECK(std::abs(static_cast<double>(flipped) / draws - 0.5) <= 0.02);
}

TEST_CASE("split protocol counts") {
  // VIPeR: 632 images of 316 identities.
  const DomainDataset viper = in_memory(0, std::vector<std::size_t>(316, 2));
  const SplitSpec v = make_single_shot_split(viper, SplitProtocol::viper(), 1);
  CHECK(v.probe.size() == 316);
  CHECK(v.gallery.size() == 316);
  check_split_invariants(viper, v);

  // GRID: 125 probe pairs plus 900 distractors from other identities.
  std::vector<std::size_t> grid_counts(125, 2);
  grid_counts.resize(125 + 450, 2);
  const DomainDataset grid = in_memory(0, grid_counts);
  const SplitSpec g = make_single_shot_split(grid, SplitProtocol::grid(), 2);
  CHECK(g.probe.size() == 125);
  CHECK(g.gallery.size() == 1025);
  check_split_invariants(grid, g);

  const DomainDataset toy = in_memory(0, {2, 2});
  const SplitSpec t = make_single_shot_split(toy, SplitProtocol{}, 3);
  CHECK(t.probe.size() == 2);
  CHECK(t.gallery.size() == 2);
  check_split_invariants(toy, t);

  CHECK_THROWS_AS(make_single_shot_split(toy, SplitProtocol::viper(), 0), DataError);
  CHECK_THROWS_AS(make_single_shot_split(in_memory(0, {2}), SplitProtocol{}, 0), DataError);
  CHECK_THROWS_AS(SplitProtocol::by_name("market"), ConfigError);
  CHECK(SplitProtocol::by_name("prid").gallery_count == 649);
  CHECK(SplitProtocol::by_name("ilids").probe_count == 60);
}

TEST_CASE("split validity over random datasets and seeds") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> counts(2 + uniform_index(rng, 20));
    for (auto& c : counts) c = 2 + uniform_index(rng, 4);
    const DomainDataset ds = in_memory(0, counts);
    SplitProtocol p;
    p.probe_count = 1 + uniform_index(rng, counts.size());
    // Distractor pool when the largest identities are drawn as probes.
    std::vector<std::size_t> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    std::size_t pool = 0;
    for (std::size_t i = 0; i + p.probe_count < sorted.size(); ++i) pool += sorted[i];
    p.gallery_count = p.probe_count + uniform_index(rng, pool + 1);
    p.cross_camera = trial % 3 == 0;
    const SplitSpec s = make_single_shot_split(ds, p, rng());
    CHECK(s.probe.size() == p.probe_count);
    CHECK(s.gallery.size() == p.gallery_count);
    check_split_invariants(ds, s);
    if (p.cross_camera) {
      for (const auto& pr : s.probe) {
        for (const auto& ga : s.gallery) {
          if (ga.identity == pr.identity) {
            CHECK(ds.samples[ga.index].camera != ds.samples[pr.index].camera);
          }
        }
      }
    }
  }
}

TEST_CASE("splits are seed-deterministic and serializable") {
  const DomainDataset ds = in_memory(0, std::vector<std::size_t>(30, 3));
  const SplitSpec a = make_single_shot_split(ds, SplitProtocol{}, 17);
  const SplitSpec b = make_single_shot_split(ds, SplitProtocol{}, 17);
  const SplitSpec c = make_single_shot_split(ds, SplitProtocol{}, 18);
  auto same = [](const SplitSpec& x, const SplitSpec& y) {
    if (x.probe.size() != y.probe.size() || x.gallery.size() != y.gallery.size()) return false;
    for (std::size_t i = 0; i < x.probe.size(); ++i) {
      if (x.probe[i].index != y.probe[i].index) return false;
    }
    for (std::size_t i = 0; i < x.gallery.size(); ++i) {
      if (x.gallery[i].index != y.gallery[i].index) return false;
    }
    return x.seed == y.seed;
  };
  CHECK(same(a, b));
  CHECK_FALSE(same(a, c));

  const auto dir = testing::scratch_dir("split_io");
  save_split(dir / "split.json", a);
  CHECK(same(load_split(dir / "split.json"), a));
  std::ofstream(dir / "broken.json") << "{";
  CHECK_THROWS_AS(load_split(dir / "broken.json"), DataError);
}

TEST_CASE("png roundtrip") {
  const auto dir = testing::scratch_dir("png");
  Rng rng(8);
  RawImage img(7, 5, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
  write_png(dir / "a.png", img);
  const RawImage back = read_png(dir / "a.png");
  CHECK(back.height == 7);
  CHECK(back.width == 5);
  CHECK(back.pixels == img.pixels);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_WITH_AS(read_png(dir / "junk.png"), doctest::Contains("junk.png"), DataError);
}

TEST_CASE("batch packing is NCHW") {
  Image img{2, 3, 3, std::vector<double>(18)};
  for (std::size_t i = 0; i < 18; ++i) img.values[i] = static_cast<double>(i);
  const Tensor batch = to_batch({img, img});
  CHECK(batch.shape() == std::vector<std::size_t>{2, 3, 2, 3});
  // (c=1, y=1, x=2) of sample 1 is img.at(1, 2, 1).
  CHECK(batch[((1 * 3 + 1) * 2 + 1) * 3 + 2] == img.at(1, 2, 1));
}
