#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "haspn/error.hpp"
#include "haspn/image.hpp"

namespace haspn {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline bool has_png_signature(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) return false;
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, sizeof sig, f.get()) != sizeof sig) return false;
  return png_sig_cmp(sig, 0, sizeof sig) == 0;
}

}  // namespace detail

// Decodes a PNG into [0, 1] intensities. Colour inputs are averaged over
// their colour channels (alpha is dropped); 16-bit samples divide by 65535.
inline Image load_image(const std::filesystem::path& path) {
  detail::FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, sizeof sig, file.get()) != sizeof sig || png_sig_cmp(sig, 0, sizeof sig) != 0) {
    throw FormatError("not a PNG file: " + path.string());
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }

  // Everything with a destructor lives above setjmp.
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int channels = 0, bit_depth = 0, color_type = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, sizeof sig);
  png_read_info(png, info);
  color_type = png_get_color_type(png, info);
  bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  channels = png_get_channels(png, info);
  bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const int colour_channels = (channels == 2 || channels == 4) ? channels - 1 : channels;
  const double max_value = bit_depth == 16 ? 65535.0 : 255.0;
  Image img(static_cast<int>(height), static_cast<int>(width));
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int c = 0; c < colour_channels; ++c) {
        const std::size_t idx = static_cast<std::size_t>(x) * channels + c;
        if (bit_depth == 16) {
          const auto* p = reinterpret_cast<const unsigned short*>(rows[y]);
          acc += p[idx];
        } else {
          acc += rows[y][idx];
        }
      }
      img.at(static_cast<int>(y), static_cast<int>(x)) = acc / (colour_channels * max_value);
    }
  }
  return img;
}

// Quantizes [0, 1] intensities to 8 bits (round half up, clamped).
inline std::vector<unsigned char> quantize8(const Image& image) {
  std::vector<unsigned char> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    double v = image.data[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out[i] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
  }
  return out;
}

// Writes an 8-bit grayscale PNG.
inline void save_png(const std::filesystem::path& path, const Image& image) {
  std::vector<unsigned char> bytes = quantize8(image);
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&desc, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("cannot write " + path.string() + ": " + msg);
  }
}

}  // namespace haspn
