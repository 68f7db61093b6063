#pragma once

// Training samples and their random flip / scale / crop augmentation.

#include <algorithm>
#include <cmath>
#include <string>

#include "ducseg/errors.hpp"
#include "ducseg/label_map.hpp"
#include "ducseg/ops/resize.hpp"
#include "ducseg/rng.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

/// One image (1, c, h, w) with its label map (1, h, w).
template <Real T>
struct Sample {
  Tensor4<T> image;
  LabelMap label;

  void validate() const {
    if (image.n() != 1 || label.n != 1 || image.h() != label.h || image.w() != label.w) {
      throw ShapeError("Sample: image " + to_string(image.shape()) + " and label (" +
                       std::to_string(label.n) + "," + std::to_string(label.h) + "," +
                       std::to_string(label.w) + ") disagree");
    }
  }
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// vertical reverses rows (top-bottom), horizontal reverses columns.
enum class FlipAxis { vertical, horizontal, none };

inline std::string to_string(FlipAxis a) {
  switch (a) {
    case FlipAxis::vertical: return "vertical";
    case FlipAxis::horizontal: return "horizontal";
    case FlipAxis::none: return "none";
  }
  return "none";
}

inline FlipAxis parse_flip_axis(const std::string& s) {
  if (s == "vertical") return FlipAxis::vertical;
  if (s == "horizontal") return FlipAxis::horizontal;
  if (s == "none") return FlipAxis::none;
  throw ConfigError("flip axis must be vertical, horizontal or none, got '" + s + "'");
}

struct AugmentConfig {
  int crop = 64;
  double scale_min = 0.5;
  double scale_max = 2.0;
  FlipAxis flip = FlipAxis::vertical;
  double flip_probability = 0.5;

  void validate() const {
    if (crop < 1) throw ConfigError("AugmentConfig: crop must be >= 1");
    if (!(scale_min > 0.0) || !(scale_min <= scale_max)) {
      throw ConfigError("AugmentConfig: scale range must be positive and ordered");
    }
    if (flip_probability < 0.0 || flip_probability > 1.0) {
      throw ConfigError("AugmentConfig: flip probability outside [0, 1]");
    }
  }
};

template <Real T>
Sample<T> flip_sample(const Sample<T>& s, FlipAxis axis) {
  if (axis == FlipAxis::none) return s;
  Sample<T> out = s;
  const int H = s.label.h, W = s.label.w;
  auto src = [&](int y, int x) {
    return axis == FlipAxis::vertical ? std::pair{H - 1 - y, x} : std::pair{y, W - 1 - x};
  };
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto [sy, sx] = src(y, x);
      for (int c = 0; c < s.image.c(); ++c) out.image(0, c, y, x) = s.image(0, c, sy, sx);
      out.label(0, y, x) = s.label(0, sy, sx);
    }
  }
  return out;
}

/// Nearest-neighbour resize of a label map with the half-pixel-center convention.
inline LabelMap resize_labels_nearest(const LabelMap& l, int th, int tw) {
  if (th < 1 || tw < 1) throw ShapeError("resize_labels_nearest: empty target");
  LabelMap out(l.n, th, tw, 0, l.ignore_index);
  auto src = [](int i, int in, int o) {
    return std::min(in - 1, static_cast<int>(std::floor((i + 0.5) * in / o)));
  };
  for (int b = 0; b < l.n; ++b) {
    for (int y = 0; y < th; ++y) {
      const int sy = src(y, l.h, th);
      for (int x = 0; x < tw; ++x) out(b, y, x) = l(b, sy, src(x, l.w, tw));
    }
  }
  return out;
}

/// Bilinear for the image, nearest for the labels; size = round(extent * factor), at least 1.
template <Real T>
Sample<T> scale_sample(const Sample<T>& s, double factor) {
  const int th = std::max(1, static_cast<int>(std::lround(s.label.h * factor)));
  const int tw = std::max(1, static_cast<int>(std::lround(s.label.w * factor)));
  if (th == s.label.h && tw == s.label.w) return s;
  return {bilinear_resize_forward(s.image, th, tw), resize_labels_nearest(s.label, th, tw)};
}

/// size x size window at (y0, x0); pixels outside the sample become zero / ignore.
template <Real T>
Sample<T> crop_sample(const Sample<T>& s, int y0, int x0, int size) {
  Sample<T> out{crop_region(s.image, y0, x0, size, size),
                LabelMap(1, size, size, s.label.ignore_index, s.label.ignore_index)};
  for (int y = 0; y < size; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= s.label.h) continue;
    for (int x = 0; x < size; ++x) {
      const int sx = x0 + x;
      if (sx >= 0 && sx < s.label.w) out.label(0, y, x) = s.label(0, sy, sx);
    }
  }
  return out;
}

/// Random flip, scale and crop. Always draws the same number of values from
/// `rng` (flip coin, scale, two offsets) so sample streams stay aligned.
template <Real T>
Sample<T> augment(const Sample<T>& sample, const AugmentConfig& cfg, SplitMix64& rng) {
  sample.validate();
  cfg.validate();
  const bool flip = rng.coin(cfg.flip_probability);
  const double factor = rng.uniform(cfg.scale_min, cfg.scale_max);
  const std::uint64_t ry = rng.next(), rx = rng.next();
  Sample<T> s = flip ? flip_sample(sample, cfg.flip) : sample;
  s = scale_sample(s, factor);
  // Larger than the crop: window inside the image. Smaller: image placed inside the window.
  auto offset = [&](int extent, std::uint64_t r) {
    const int slack = std::abs(extent - cfg.crop);
    const int o = static_cast<int>(r % static_cast<std::uint64_t>(slack + 1));
    return extent >= cfg.crop ? o : -o;
  };
  return crop_sample(s, offset(s.label.h, ry), offset(s.label.w, rx), cfg.crop);
}

}  // namespace ducseg
