#pragma once

// Synthetic segmentation scenes: filled circles, rectangles and triangles on
// a shaded background. Class 0 is background. Shape class c >= 1 has kind
// (c - 1) % 3 (circle, rectangle, triangle) and a dominant RGB channel
// ((c - 1) / 3 + (c - 1)) % 3. The first nine classes get distinct
// (kind, channel) pairs; beyond that classes repeat and are not separable.
//
// Labels are exact rasterizations: a pixel belongs to a shape when its
// center lies inside it. Later shapes occlude earlier ones.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "ducseg/augment.hpp"
#include "ducseg/errors.hpp"
#include "ducseg/rng.hpp"

namespace ducseg {

namespace detail {

struct Pt {
  double x, y;
};

inline double cross(Pt o, Pt a, Pt b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

inline bool inside_triangle(Pt p, const std::array<Pt, 3>& t) {
  const double d1 = cross(t[0], t[1], p), d2 = cross(t[1], t[2], p), d3 = cross(t[2], t[0], p);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0, pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

/// A color at L1 distance >= 0.6 from `avoid`, with channel `bright` the largest.
inline std::array<double, 3> shape_color(SplitMix64& rng, const std::array<double, 3>& avoid,
                                         int bright) {
  for (;;) {
    std::array<double, 3> c{rng.uniform(), rng.uniform(), rng.uniform()};
    c[static_cast<std::size_t>(bright)] = rng.uniform(0.75, 1.0);
    for (int k = 0; k < 3; ++k) {
      if (k != bright) c[static_cast<std::size_t>(k)] *= 0.5;
    }
    const double d = std::abs(c[0] - avoid[0]) + std::abs(c[1] - avoid[1]) + std::abs(c[2] - avoid[2]);
    if (d >= 0.6) return c;
  }
}

}  // namespace detail

/// One scene of size x size drawn from `rng`.
template <Real T = double>
Sample<T> make_shapes_sample(int size, int num_classes, SplitMix64& rng) {
  if (num_classes < 2) throw ConfigError("shapes dataset: need at least 2 classes");
  if (size < 8) throw ConfigError("shapes dataset: image size must be >= 8");
  Sample<T> s{Tensor4<T>({1, 3, size, size}), LabelMap(1, size, size, 0)};

  // Background: base color plus a linear ramp.
  std::array<double, 3> base{}, ramp{};
  for (std::size_t c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    ramp[c] = rng.uniform(-0.2, 0.2);
  }
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ax = std::cos(angle), ay = std::sin(angle);
  std::vector<std::array<double, 3>> color(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = ((x + 0.5) * ax + (y + 0.5) * ay) / size;
      for (std::size_t c = 0; c < 3; ++c) {
        color[static_cast<std::size_t>(y) * size + x][c] = base[c] + ramp[c] * t;
      }
    }
  }

  const int shapes = 1 + static_cast<int>(rng.below(3));
  for (int i = 0; i < shapes; ++i) {
    const int cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes - 1)));
    const int kind = (cls - 1) % 3;
    const int bright = ((cls - 1) / 3 + kind) % 3;
    const auto col = detail::shape_color(rng, base, bright);
    const double r = rng.uniform(0.1, 0.25) * size;
    const double cx = rng.uniform(0.15, 0.85) * size, cy = rng.uniform(0.15, 0.85) * size;
    const double aspect = rng.uniform(0.6, 1.4);
    const double rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::array<detail::Pt, 3> tri{};
    for (int k = 0; k < 3; ++k) {
      const double a = rot + 2.0 * std::numbers::pi * k / 3.0;
      tri[static_cast<std::size_t>(k)] = {cx + 1.3 * r * std::cos(a), cy + 1.3 * r * std::sin(a)};
    }
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const detail::Pt p{x + 0.5, y + 0.5};
        bool in = false;
        switch (kind) {
          case 0: in = (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy) <= r * r; break;
          case 1: in = std::abs(p.x - cx) <= r * aspect && std::abs(p.y - cy) <= r / aspect; break;
          default: in = detail::inside_triangle(p, tri); break;
        }
        if (in) {
          s.label(0, y, x) = cls;
          color[static_cast<std::size_t>(y) * size + x] = col;
        }
      }
    }
  }

  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double v = color[static_cast<std::size_t>(y) * size + x][static_cast<std::size_t>(c)] +
                         rng.normal(0.0, 0.03);
        s.image(0, c, y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

/// Sample i is drawn from SplitMix64::derive(seed, i), so any prefix of a
/// larger dataset equals the smaller dataset with the same seed.
template <Real T = double>
std::vector<Sample<T>> make_shapes_dataset(int count, int size, int num_classes, std::uint64_t seed) {
  if (count < 0) throw ConfigError("shapes dataset: negative count");
  std::vector<Sample<T>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto rng = SplitMix64::derive(seed, static_cast<std::uint64_t>(i));
    out.push_back(make_shapes_sample<T>(size, num_classes, rng));
  }
  return out;
}

}  // namespace ducseg
