#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"

namespace ducseg {

inline constexpr int kDefaultIgnoreIndex = 255;

/// Integer class raster of shape (n, h, w); values are class indices or the ignore index.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  int ignore_index = kDefaultIgnoreIndex;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, std::int32_t fill = 0, int ignore = kDefaultIgnoreIndex)
      : n(n_), h(h_), w(w_), ignore_index(ignore),
        data(static_cast<std::size_t>(n_) * h_ * w_, fill) {
    if (n_ < 0 || h_ < 0 || w_ < 0) throw ShapeError("LabelMap: negative dimension");
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t index(int b, int y, int x) const noexcept {
    return (static_cast<std::size_t>(b) * h + y) * w + x;
  }
  std::int32_t& operator()(int b, int y, int x) noexcept { return data[index(b, y, x)]; }
  std::int32_t operator()(int b, int y, int x) const noexcept { return data[index(b, y, x)]; }

  bool same_shape(const LabelMap& o) const noexcept { return n == o.n && h == o.h && w == o.w; }

  /// Throws unless every value is in [0, k) or equals the ignore index.
  void validate(int k) const {
    for (std::int32_t v : data) {
      if (v != ignore_index && (v < 0 || v >= k)) {
        throw ShapeError("label value " + std::to_string(v) + " outside [0, " +
                         std::to_string(k) + ") and not the ignore index " +
                         std::to_string(ignore_index));
      }
    }
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Item `index` of a label batch.
inline LabelMap label_item(const LabelMap& labels, int index) {
  if (index < 0 || index >= labels.n) throw ShapeError("label_item: index out of range");
  LabelMap out(1, labels.h, labels.w, 0, labels.ignore_index);
  const std::size_t plane = static_cast<std::size_t>(labels.h) * labels.w;
  std::copy_n(labels.data.begin() + static_cast<std::ptrdiff_t>(plane * index), plane,
              out.data.begin());
  return out;
}

}  // namespace ducseg
