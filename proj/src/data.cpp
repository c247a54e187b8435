#include "dgreid/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "dgreid/errors.hpp"

namespace dgreid {

namespace fs = std::filesystem;

std::vector<std::vector<std::size_t>> DomainDataset::by_identity() const {
  std::vector<std::vector<std::size_t>> groups(num_identities);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Label id = samples[i].identity;
    if (id >= groups.size()) groups.resize(id + 1);
    groups[id].push_back(i);
  }
  return groups;
}

void DomainDataset::validate() const {
  const auto groups = by_identity();
  if (groups.size() != num_identities) {
    throw DataError("domain " + std::to_string(domain_id) + ": identity label " +
                    std::to_string(groups.size() - 1) + " exceeds num_identities " +
                    std::to_string(num_identities));
  }
  for (std::size_t id = 0; id < groups.size(); ++id) {
    if (groups[id].empty()) {
      throw DataError("domain " + std::to_string(domain_id) + ": identity " +
                      std::to_string(id) + " has no images (labels not dense)");
    }
    if (groups[id].size() < 2) {
      const auto& s = samples[groups[id].front()];
      throw DataError("domain " + std::to_string(domain_id) + ": identity " +
                      std::to_string(s.original_identity) +
                      " has a single image; at least 2 are required");
    }
  }
}

void DomainDataset::load_pixels() {
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].pixels) {
      samples[i].pixels = std::make_shared<const RawImage>(read_png(samples[i].path));
    }
  }
}

Label GlobalLabelMap::global(int domain, Label local) const {
  auto it = offsets.find(domain);
  if (it == offsets.end()) {
    throw std::out_of_range("label map: unknown domain " + std::to_string(domain));
  }
  return it->second + local;
}

std::size_t SourceCollection::total_images() const {
  std::size_t n = 0;
  for (const auto& d : domains) n += d.num_images();
  return n;
}

// ------------------------------------------------------------ manifests

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
bool parse_int(const std::string& s, T& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

DomainDataset load_domain(const fs::path& manifest_path, int domain_id) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  const fs::path root = manifest_path.parent_path();
  const std::string where = manifest_path.string();

  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  struct Row {
    fs::path path;
    long id;
    int camera;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!have_header) {
      if (line != "path,identity,camera") {
        throw DataError(where + ":" + std::to_string(line_no) +
                        ": expected header 'path,identity,camera'");
      }
      have_header = true;
      continue;
    }
    const auto fields = split_fields(line);
    if (fields.size() != 3 || fields[0].empty()) {
      throw DataError(where + ":" + std::to_string(line_no) +
                      ": expected 3 fields 'path,identity,camera'");
    }
    Row row;
    if (!parse_int(fields[1], row.id) || row.id < 0) {
      throw DataError(where + ":" + std::to_string(line_no) + ": invalid identity '" +
                      fields[1] + "'");
    }
    if (!parse_int(fields[2], row.camera)) {
      throw DataError(where + ":" + std::to_string(line_no) + ": invalid camera '" +
                      fields[2] + "'");
    }
    row.path = root / fields[0];
    if (!fs::exists(row.path)) {
      throw DataError("missing image file " + row.path.string() + " (" + where + ":" +
                      std::to_string(line_no) + ")");
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw DataError(where + ": empty manifest");

  std::set<long> ids;
  for (const auto& r : rows) ids.insert(r.id);
  std::map<long, Label> dense;
  for (long id : ids) dense.emplace(id, dense.size());

  DomainDataset ds;
  ds.domain_id = domain_id;
  ds.name = manifest_path.parent_path().filename().string();
  ds.num_identities = dense.size();
  ds.samples.reserve(rows.size());
  for (auto& r : rows) {
    ImageSample s;
    s.path = std::move(r.path);
    s.identity = dense.at(r.id);
    s.camera = r.camera;
    s.domain = domain_id;
    s.original_identity = r.id;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

void write_manifest(const fs::path& manifest_path, const DomainDataset& dataset) {
  std::ofstream out(manifest_path);
  if (!out) throw DataError("cannot write manifest " + manifest_path.string());
  out << "path,identity,camera\n";
  const fs::path root = manifest_path.parent_path();
  for (const auto& s : dataset.samples) {
    out << fs::relative(s.path, root).generic_string() << ',' << s.original_identity
        << ',' << s.camera << '\n';
  }
}

GlobalLabelMap build_label_map(const std::vector<DomainDataset>& domains) {
  if (domains.empty()) throw DataError("label map: no domains");
  std::map<int, std::size_t> counts;
  for (const auto& d : domains) {
    if (!counts.emplace(d.domain_id, d.num_identities).second) {
      throw DataError("label map: duplicate domain id " + std::to_string(d.domain_id));
    }
  }
  GlobalLabelMap map;
  for (const auto& [domain, n] : counts) {
    map.offsets.emplace(domain, map.total_identities);
    map.total_identities += n;
  }
  return map;
}

SourceCollection make_collection(std::vector<DomainDataset> domains) {
  SourceCollection c;
  c.label_map = build_label_map(domains);
  c.domains = std::move(domains);
  return c;
}

// ------------------------------------------------------------ images

Image preprocess(const RawImage& raw, const Normalization& norm, std::size_t height,
                 std::size_t width) {
  if (raw.channels != 3) {
    throw DataError("preprocess: expected a 3-channel image, got " +
                    std::to_string(raw.channels) + " channels");
  }
  if (raw.height == 0 || raw.width == 0) throw DataError("preprocess: empty image");
  Image out{height, width, 3, std::vector<double>(height * width * 3)};
  const double sy = static_cast<double>(raw.height) / static_cast<double>(height);
  const double sx = static_cast<double>(raw.width) / static_cast<double>(width);
  const bool same = raw.height == height && raw.width == width;
  for (std::size_t y = 0; y < height; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(raw.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, raw.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(raw.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, raw.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        double v;
        if (same) {
          v = raw.at(y, x, c);
        } else {
          v = (1.0 - wy) * ((1.0 - wx) * raw.at(y0, x0, c) + wx * raw.at(y0, x1, c)) +
              wy * ((1.0 - wx) * raw.at(y1, x0, c) + wx * raw.at(y1, x1, c));
        }
        out.at(y, x, c) = (v / 255.0 - norm.mean[c]) / norm.stddev[c];
      }
    }
  }
  return out;
}

Image crop_and_flip(const Image& image, std::size_t padding, std::size_t offset_y,
                    std::size_t offset_x, bool flip) {
  if (offset_y > 2 * padding || offset_x > 2 * padding) {
    throw std::invalid_argument("crop_and_flip: offset outside padded frame");
  }
  Image out{image.height, image.width, image.channels,
            std::vector<double>(image.values.size(), 0.0)};
  for (std::size_t y = 0; y < image.height; ++y) {
    const long sy = static_cast<long>(y + offset_y) - static_cast<long>(padding);
    if (sy < 0 || sy >= static_cast<long>(image.height)) continue;
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::size_t dx = flip ? image.width - 1 - x : x;
      const long sx = static_cast<long>(dx + offset_x) - static_cast<long>(padding);
      if (sx < 0 || sx >= static_cast<long>(image.width)) continue;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = image.at(static_cast<std::size_t>(sy),
                                   static_cast<std::size_t>(sx), c);
      }
    }
  }
  return out;
}

Image augment(const Image& image, Rng& rng, const AugmentConfig& config) {
  const bool flip = uniform01(rng) < config.flip_probability;
  const std::size_t span = 2 * config.padding + 1;
  const auto oy = static_cast<std::size_t>(uniform_index(rng, span));
  const auto ox = static_cast<std::size_t>(uniform_index(rng, span));
  return crop_and_flip(image, config.padding, oy, ox, flip);
}

void write_to_batch(const Image& image, Tensor& batch, std::size_t slot) {
  const std::size_t h = image.height, w = image.width;
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != h || batch.dim(3) != w) {
    throw std::invalid_argument("write_to_batch: batch shape " + batch.shape_string());
  }
  double* dst = batch.data() + slot * 3 * h * w;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) dst[(c * h + y) * w + x] = image.at(y, x, c);
    }
  }
}

Tensor to_batch(const std::vector<Image>& images) {
  if (images.empty()) return Tensor({0, 3, kImageHeight, kImageWidth});
  Tensor batch({images.size(), 3, images[0].height, images[0].width});
  for (std::size_t i = 0; i < images.size(); ++i) write_to_batch(images[i], batch, i);
  return batch;
}

// ------------------------------------------------------------ splits

SplitProtocol SplitProtocol::by_name(const std::string& name) {
  if (name == "grid") return grid();
  if (name == "ilids") return ilids();
  if (name == "prid") return prid();
  if (name == "viper") return viper();
  if (name == "all") return {};
  throw ConfigError("unknown split protocol '" + name +
                    "' (expected all, grid, ilids, prid or viper)");
}

SplitSpec make_single_shot_split(const DomainDataset& dataset,
                                 const SplitProtocol& protocol, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5B17}));
  const auto groups = dataset.by_identity();
  std::vector<Label> eligible;
  for (Label id = 0; id < groups.size(); ++id) {
    if (groups[id].size() >= 2) eligible.push_back(id);
  }
  if (eligible.size() < 2 && protocol.probe_count == 0) {
    throw DataError("split: dataset needs at least 2 identities with 2+ images");
  }
  const std::size_t probe_count =
      protocol.probe_count ? protocol.probe_count : eligible.size();
  const std::size_t gallery_count =
      protocol.gallery_count ? protocol.gallery_count : probe_count;
  if (probe_count > eligible.size()) {
    throw DataError("split '" + protocol.name + "': requested " +
                    std::to_string(probe_count) + " probe identities but only " +
                    std::to_string(eligible.size()) + " are available");
  }
  if (gallery_count < probe_count) {
    throw DataError("split '" + protocol.name +
                    "': gallery must hold at least one image per probe identity");
  }

  std::shuffle(eligible.begin(), eligible.end(), rng);
  std::vector<bool> is_probe(groups.size(), false);
  SplitSpec split;
  split.seed = seed;
  for (std::size_t i = 0; i < probe_count; ++i) {
    const Label id = eligible[i];
    is_probe[id] = true;
    std::vector<std::size_t> imgs = groups[id];
    std::shuffle(imgs.begin(), imgs.end(), rng);
    const std::size_t probe_img = imgs[0];
    std::size_t match = imgs[1];
    if (protocol.cross_camera) {
      auto it = std::find_if(imgs.begin() + 1, imgs.end(), [&](std::size_t s) {
        return dataset.samples[s].camera != dataset.samples[probe_img].camera;
      });
      if (it == imgs.end()) {
        throw DataError("split: identity " + std::to_string(id) +
                        " has no cross-camera gallery image");
      }
      match = *it;
    }
    split.probe.push_back({probe_img, id});
    split.gallery.push_back({match, id});
  }

  std::vector<std::size_t> pool;
  for (Label id = 0; id < groups.size(); ++id) {
    if (!is_probe[id]) pool.insert(pool.end(), groups[id].begin(), groups[id].end());
  }
  const std::size_t distractors = gallery_count - probe_count;
  if (pool.size() < distractors) {
    throw DataError("split '" + protocol.name + "': requested " +
                    std::to_string(gallery_count) + " gallery images but only " +
                    std::to_string(probe_count + pool.size()) + " are available");
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t i = 0; i < distractors; ++i) {
    split.gallery.push_back({pool[i], dataset.samples[pool[i]].identity});
  }
  std::shuffle(split.gallery.begin(), split.gallery.end(), rng);
  return split;
}

void save_split(const fs::path& path, const SplitSpec& split) {
  auto entries = [](const std::vector<SplitEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({e.index, e.identity});
    return a;
  };
  nlohmann::json j = {{"version", 1},
                      {"seed", split.seed},
                      {"probe", entries(split.probe)},
                      {"gallery", entries(split.gallery)}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split file " + path.string());
  out << j.dump(1) << '\n';
}

SplitSpec load_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    SplitSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("probe")) s.probe.push_back({e.at(0), e.at(1)});
    for (const auto& e : j.at("gallery")) s.gallery.push_back({e.at(0), e.at(1)});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("split file " + path.string() + ": " + e.what());
  }
}

}  // namespace dgreid
