#pragma once

// Planar C x H x W images with values in [0, 1], plus lossless PNG I/O.
//
// Simulator images live on the 16-bit lattice {k / 65535}, so writing them as
// 16-bit PNGs and reading them back reproduces every double exactly.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "callig/errors.hpp"

namespace callig {

inline constexpr double kLevels16 = 65535.0;

inline double quantize16(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * kLevels16) / kLevels16;
}

struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::size_t plane() const { return height * width; }
  bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void quantize16(Image& img) {
  for (auto& v : img.data) v = quantize16(v);
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

[[noreturn]] inline void png_error_fn(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
inline void png_warning_fn(png_structp, png_const_charp) {}

inline void write_png_rows(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height, int color_type,
                           int bit_depth, const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::uint32_t y = 0; y < height; ++y) {
      png_write_row(png, const_cast<png_bytep>(bytes.data() + y * row_bytes));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

// 16-bit grayscale (1 channel) or RGB (3 channels), big-endian samples per the
// PNG standard.
inline void write_png16(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ConfigError("write_png16: unsupported channel count " + std::to_string(img.channels));
  }
  const std::size_t row_bytes = img.width * img.channels * 2;
  std::vector<std::uint8_t> bytes(row_bytes * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * kLevels16));
        const std::size_t off = y * row_bytes + (x * img.channels + c) * 2;
        bytes[off] = static_cast<std::uint8_t>(v >> 8);
        bytes[off + 1] = static_cast<std::uint8_t>(v & 0xff);
      }
  detail::write_png_rows(path, static_cast<std::uint32_t>(img.width), static_cast<std::uint32_t>(img.height),
                         img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, 16, bytes, row_bytes);
}

// 8-bit RGB, interleaved rows; used for plots.
inline void write_png_rgb8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                           const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw UsageError("write_png_rgb8: buffer size mismatch");
  detail::write_png_rows(path, static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height),
                         PNG_COLOR_TYPE_RGB, 8, rgb, width * 3);
}

// Reads a gray or RGB PNG of 8 or 16 bits into [0, 1] doubles.
inline Image read_png(const std::filesystem::path& path) {
  auto file = detail::open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  Image img;
  try {
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if ((color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB) || (depth != 8 && depth != 16)) {
      throw IoError("png: unsupported format in " + path.string());
    }
    const std::size_t channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
    const std::size_t bytes_per = static_cast<std::size_t>(depth / 8);
    const double levels = depth == 16 ? kLevels16 : 255.0;
    std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
    img = Image(channels, height, width);
    for (std::size_t y = 0; y < height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t off = (x * channels + c) * bytes_per;
          const unsigned v = bytes_per == 2 ? (unsigned{row[off]} << 8) | row[off + 1] : row[off];
          img.at(c, y, x) = static_cast<double>(v) / levels;
        }
    }
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace callig
