#pragma once

// 8-bit PNG rasters through libpng: RGB images and single-channel index maps.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/label_map.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg::io {

struct Raster8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

/// Any PNG converted to 8-bit RGB (alpha dropped, gray expanded).
inline Raster8 read_png_rgb(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
    throw FormatError("cannot read PNG " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Raster8 r{static_cast<int>(img.width), static_cast<int>(img.height), 3,
            std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  if (png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr) == 0) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("cannot decode PNG " + path + ": " + msg);
  }
  return r;
}

/// Raw 8-bit sample values of a grayscale or palette PNG (palette indices,
/// not colors). Anything else is a format error.
inline Raster8 read_png_index(const std::string& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw FormatError("cannot open PNG " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng initialization failed");
  }
  Raster8 r;
  std::string error;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("cannot decode PNG " + path);
  }
  png_init_io(png, f.get());
  png_read_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  if (depth != 8 || (type != PNG_COLOR_TYPE_GRAY && type != PNG_COLOR_TYPE_PALETTE)) {
    error = path + ": label PNG must be 8-bit grayscale or palette, got bit depth " +
            std::to_string(depth) + " color type " + std::to_string(type);
  } else {
    r.width = static_cast<int>(png_get_image_width(png, info));
    r.height = static_cast<int>(png_get_image_height(png, info));
    r.channels = 1;
    r.pixels.resize(static_cast<std::size_t>(r.width) * r.height);
    png_bytepp rows = png_get_rows(png, info);
    for (int y = 0; y < r.height; ++y) {
      std::copy_n(rows[y], r.width, r.pixels.data() + static_cast<std::size_t>(y) * r.width);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!error.empty()) throw FormatError(error);
  return r;
}

inline void write_png(const std::string& path, const Raster8& r) {
  if (r.channels != 1 && r.channels != 3) throw FormatError("write_png: channels must be 1 or 3");
  if (r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * r.channels) {
    throw FormatError("write_png: pixel buffer size mismatch");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(r.width);
  img.height = static_cast<png_uint_32>(r.height);
  img.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&img, path.c_str(), 0, r.pixels.data(), 0, nullptr) == 0) {
    throw FormatError("cannot write PNG " + path + ": " + img.message);
  }
}

/// (1, channels, h, w) with values in [0, 1].
template <Real T = double>
Tensor4<T> raster_to_tensor(const Raster8& r) {
  Tensor4<T> t({1, r.channels, r.height, r.width});
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < r.channels; ++c) {
        t(0, c, y, x) =
            static_cast<T>(r.pixels[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c]) /
            T(255);
      }
    }
  }
  return t;
}

/// Item 0 of `t`, clamped to [0, 1] and rounded to 8 bits. Needs 1 or 3 channels.
template <Real T>
Raster8 tensor_to_raster(const Tensor4<T>& t) {
  if (t.c() != 1 && t.c() != 3) throw ShapeError("tensor_to_raster: need 1 or 3 channels");
  Raster8 r{t.w(), t.h(), t.c(), std::vector<std::uint8_t>(static_cast<std::size_t>(t.w()) * t.h() * t.c())};
  for (int y = 0; y < t.h(); ++y) {
    for (int x = 0; x < t.w(); ++x) {
      for (int c = 0; c < t.c(); ++c) {
        const double v = std::clamp(static_cast<double>(t(0, c, y, x)), 0.0, 1.0);
        r.pixels[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return r;
}

inline LabelMap raster_to_labels(const Raster8& r) {
  if (r.channels != 1) throw FormatError("label raster must have one channel");
  LabelMap l(1, r.height, r.width);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) l.data[i] = r.pixels[i];
  return l;
}

/// Item 0 of `l` as an index raster; values must fit in 8 bits.
inline Raster8 labels_to_raster(const LabelMap& l) {
  Raster8 r{l.w, l.h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(l.w) * l.h)};
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    const auto v = l.data[i];
    if (v < 0 || v > 255) throw FormatError("label value " + std::to_string(v) + " does not fit in 8 bits");
    r.pixels[i] = static_cast<std::uint8_t>(v);
  }
  return r;
}

/// Color of class `k`: the bit-interleaved colormap used by the Pascal VOC toolkit.
inline std::array<std::uint8_t, 3> palette_color(int k) {
  std::array<std::uint8_t, 3> c{0, 0, 0};
  for (int shift = 7; k > 0; --shift, k >>= 3) {
    c[0] |= static_cast<std::uint8_t>(((k >> 0) & 1) << shift);
    c[1] |= static_cast<std::uint8_t>(((k >> 1) & 1) << shift);
    c[2] |= static_cast<std::uint8_t>(((k >> 2) & 1) << shift);
  }
  return c;
}

inline Raster8 colorize(const LabelMap& l) {
  Raster8 r{l.w, l.h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(l.w) * l.h * 3)};
  for (std::size_t i = 0; i < static_cast<std::size_t>(l.w) * l.h; ++i) {
    const auto c = palette_color(l.data[i]);
    std::copy(c.begin(), c.end(), r.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return r;
}

}  // namespace ducseg::io
