#include "dgreid/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "dgreid/errors.hpp"

namespace dgreid {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open image " + path.string());

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_stdio(&image, file.get())) {
    throw DataError("cannot decode image " + path.string() + ": " + image.message);
  }
  std::size_t channels = 3;
  if (image.format & PNG_FORMAT_FLAG_COLOR) {
    channels = (image.format & PNG_FORMAT_FLAG_ALPHA) ? 4 : 3;
    image.format = channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  } else {
    channels = (image.format & PNG_FORMAT_FLAG_ALPHA) ? 2 : 1;
    image.format = channels == 2 ? PNG_FORMAT_GA : PNG_FORMAT_GRAY;
  }
  RawImage out(image.height, image.width, channels);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode image " + path.string() + ": " + image.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  switch (img.channels) {
    case 1: image.format = PNG_FORMAT_GRAY; break;
    case 2: image.format = PNG_FORMAT_GA; break;
    case 3: image.format = PNG_FORMAT_RGB; break;
    case 4: image.format = PNG_FORMAT_RGBA; break;
    default: throw DataError("write_png: unsupported channel count");
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0,
                               nullptr)) {
    throw DataError("cannot write image " + path.string() + ": " + image.message);
  }
}

}  // namespace dgreid
