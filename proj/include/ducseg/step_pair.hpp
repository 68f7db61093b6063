#pragma once

// Synthetic piecewise-constant test images for joint upsampling: a
// high-resolution image with a straight step edge and a rectangle, and its
// bilinear downsample.

#include <cmath>
#include <cstdint>

#include "ducseg/ops/resize.hpp"
#include "ducseg/rng.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

template <Real T>
struct StepPair {
  Tensor4<T> high;  // (1, 1, size, size), values in [0, 1]
  Tensor4<T> low;   // (1, 1, size / factor, size / factor)
};

template <Real T = double>
StepPair<T> make_step_pair(std::uint64_t seed, int size, int factor) {
  if (size < 1 || factor < 1 || size % factor != 0) {
    throw ConfigError("make_step_pair: size must be a positive multiple of factor");
  }
  SplitMix64 rng = SplitMix64::derive(seed, 0x57E9);
  const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double nx = std::cos(angle), ny = std::sin(angle);
  const double offset = rng.uniform(-0.25, 0.25) * size;
  const double lo = rng.uniform(0.0, 0.4), hi = rng.uniform(0.6, 1.0);
  const int rw = size / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size / 4 + 1)));
  const int rh = size / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size / 4 + 1)));
  const int ry = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - rh + 1)));
  const int rx = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - rw + 1)));
  const double rect_value = rng.uniform(0.0, 1.0);

  StepPair<T> out;
  out.high = Tensor4<T>({1, 1, size, size});
  const double c = 0.5 * (size - 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = ((x - c) * nx + (y - c) * ny > offset) ? hi : lo;
      if (y >= ry && y < ry + rh && x >= rx && x < rx + rw) v = rect_value;
      out.high(0, 0, y, x) = static_cast<T>(v);
    }
  }
  out.low = bilinear_resize_forward(out.high, size / factor, size / factor);
  return out;
}

}  // namespace ducseg
