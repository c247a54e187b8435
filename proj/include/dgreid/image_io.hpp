#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dgreid {

// 8-bit image stored height x width x channel.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), pixels(h * w * c) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// Gray / gray+alpha / RGB / RGBA PNGs keep their channel count; 16-bit
// inputs are reduced to 8 bits. Throws DataError naming the path.
RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

}  // namespace dgreid
