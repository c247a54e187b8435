#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dgreid/image_io.hpp"
#include "dgreid/losses.hpp"
#include "dgreid/rng.hpp"
#include "dgreid/tensor.hpp"

namespace dgreid {

inline constexpr std::size_t kImageHeight = 256;
inline constexpr std::size_t kImageWidth = 128;

struct ImageSample {
  std::filesystem::path path;  // empty for in-memory samples
  Label identity = 0;          // dense, domain-local
  int camera = 0;
  int domain = 0;
  long original_identity = 0;  // id as written in the manifest
  std::shared_ptr<const RawImage> pixels;
};

struct DomainDataset {
  int domain_id = 0;
  std::string name;
  std::vector<ImageSample> samples;
  std::size_t num_identities = 0;

  std::size_t num_images() const { return samples.size(); }
  // Sample indices grouped by identity label.
  std::vector<std::vector<std::size_t>> by_identity() const;
  // Throws DataError on gaps in the label space or identities with < 2 images.
  void validate() const;
  // Decodes pixels for every sample that does not have them yet.
  void load_pixels();
};

struct GlobalLabelMap {
  std::map<int, Label> offsets;  // domain id -> offset
  std::size_t total_identities = 0;

  Label global(int domain, Label local) const;
};

struct SourceCollection {
  std::vector<DomainDataset> domains;
  GlobalLabelMap label_map;

  std::size_t total_images() const;
};

// Manifest: UTF-8 CSV with header "path,identity,camera"; paths relative to
// the manifest's directory. Identity ids may be sparse and are re-densified
// in order of first appearance after sorting by original id.
DomainDataset load_domain(const std::filesystem::path& manifest_path, int domain_id);
void write_manifest(const std::filesystem::path& manifest_path,
                    const DomainDataset& dataset);

GlobalLabelMap build_label_map(const std::vector<DomainDataset>& domains);
SourceCollection make_collection(std::vector<DomainDataset> domains);

// ------------------------------------------------------------ images

// Unit-scaled, channel-standardized image stored height x width x channel.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> values;

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return values[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * channels + c];
  }
};

// Defaults are the ImageNet statistics used by most re-ID code.
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};

  static Normalization identity() { return {{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}; }
};

// Bilinear resize (half-pixel centers) to height x width, scale to [0, 1],
// then (x - mean) / std per channel.
Image preprocess(const RawImage& image, const Normalization& norm,
                 std::size_t height = kImageHeight, std::size_t width = kImageWidth);

struct AugmentConfig {
  double flip_probability = 0.5;
  std::size_t padding = 10;
};

// Zero-pad by `padding`, crop back at (offset_y, offset_x), optionally
// mirror horizontally.
Image crop_and_flip(const Image& image, std::size_t padding, std::size_t offset_y,
                    std::size_t offset_x, bool flip);

// Random horizontal flip and padded random crop; consumes exactly three
// draws from `rng`.
Image augment(const Image& image, Rng& rng, const AugmentConfig& config = {});

// Packs images into an (N, 3, H, W) tensor.
Tensor to_batch(const std::vector<Image>& images);
void write_to_batch(const Image& image, Tensor& batch, std::size_t slot);

// ------------------------------------------------------------ splits

struct SplitProtocol {
  std::string name = "all";
  // 0 means every identity with at least two images.
  std::size_t probe_count = 0;
  // 0 means one gallery image per probe identity and no distractors.
  std::size_t gallery_count = 0;
  bool cross_camera = false;

  static SplitProtocol grid() { return {"grid", 125, 1025, false}; }
  static SplitProtocol ilids() { return {"ilids", 60, 60, false}; }
  static SplitProtocol prid() { return {"prid", 100, 649, false}; }
  static SplitProtocol viper() { return {"viper", 316, 316, false}; }
  static SplitProtocol by_name(const std::string& name);
};

struct SplitEntry {
  std::size_t index = 0;  // sample index in the dataset
  Label identity = 0;
};

struct SplitSpec {
  std::vector<SplitEntry> probe;
  std::vector<SplitEntry> gallery;
  std::uint64_t seed = 0;
};

// Single-shot split: each probe identity gets one probe image and exactly
// one gallery image; remaining gallery slots are filled with images of
// non-probe identities.
SplitSpec make_single_shot_split(const DomainDataset& dataset,
                                 const SplitProtocol& protocol, std::uint64_t seed);

void save_split(const std::filesystem::path& path, const SplitSpec& split);
SplitSpec load_split(const std::filesystem::path& path);

}  // namespace dgreid
