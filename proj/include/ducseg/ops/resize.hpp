#pragma once

// Bilinear resampling with half-pixel centers and edge clamping.
//
// Output index i maps to the source coordinate
//   src = (i + 0.5) * in / out - 0.5, clamped to [0, in - 1],
// and interpolates between floor(src) and the next sample (itself at the
// last row/column). The backward pass scatters with the same weights.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

namespace detail {

struct AxisTap {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;  // weight of `hi`
};

inline std::vector<AxisTap> bilinear_taps(int in, int out) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    taps[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in - 1), src - lo};
  }
  return taps;
}

inline void check_resize_target(int th, int tw) {
  if (th < 1 || tw < 1) {
    throw ShapeError("bilinear_resize: target size must be at least 1x1, got " +
                     std::to_string(th) + "x" + std::to_string(tw));
  }
}

}  // namespace detail

template <Real T>
Tensor4<T> bilinear_resize_forward(const Tensor4<T>& x, int target_h, int target_w) {
  detail::check_resize_target(target_h, target_w);
  if (x.h() < 1 || x.w() < 1) throw ShapeError("bilinear_resize: empty source");
  const auto ty = detail::bilinear_taps(x.h(), target_h);
  const auto tx = detail::bilinear_taps(x.w(), target_w);
  Tensor4<T> y({x.n(), x.c(), target_h, target_w});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* xp = x.plane(n, c);
      T* yp = y.plane(n, c);
      for (int i = 0; i < target_h; ++i) {
        const auto& a = ty[static_cast<std::size_t>(i)];
        const T* r0 = xp + static_cast<std::size_t>(a.lo) * x.w();
        const T* r1 = xp + static_cast<std::size_t>(a.hi) * x.w();
        const T wy1 = static_cast<T>(a.frac), wy0 = T(1) - wy1;
        for (int j = 0; j < target_w; ++j) {
          const auto& b = tx[static_cast<std::size_t>(j)];
          const T wx1 = static_cast<T>(b.frac), wx0 = T(1) - wx1;
          yp[static_cast<std::size_t>(i) * target_w + j] =
              wy0 * (wx0 * r0[b.lo] + wx1 * r0[b.hi]) + wy1 * (wx0 * r1[b.lo] + wx1 * r1[b.hi]);
        }
      }
    }
  }
  return y;
}

template <Real T>
Tensor4<T> bilinear_resize_backward(const Shape4& x_shape, int target_h, int target_w,
                                    const Tensor4<T>& grad_out) {
  detail::check_resize_target(target_h, target_w);
  const Shape4 expected{x_shape.n, x_shape.c, target_h, target_w};
  if (grad_out.shape() != expected) {
    throw ShapeError("bilinear_resize_backward: grad_out " + to_string(grad_out.shape()) +
                     " differs from " + to_string(expected));
  }
  const auto ty = detail::bilinear_taps(x_shape.h, target_h);
  const auto tx = detail::bilinear_taps(x_shape.w, target_w);
  Tensor4<T> gx(x_shape);
  for (int n = 0; n < x_shape.n; ++n) {
    for (int c = 0; c < x_shape.c; ++c) {
      const T* gp = grad_out.plane(n, c);
      T* xp = gx.plane(n, c);
      for (int i = 0; i < target_h; ++i) {
        const auto& a = ty[static_cast<std::size_t>(i)];
        T* r0 = xp + static_cast<std::size_t>(a.lo) * x_shape.w;
        T* r1 = xp + static_cast<std::size_t>(a.hi) * x_shape.w;
        const T wy1 = static_cast<T>(a.frac), wy0 = T(1) - wy1;
        for (int j = 0; j < target_w; ++j) {
          const auto& b = tx[static_cast<std::size_t>(j)];
          const T wx1 = static_cast<T>(b.frac), wx0 = T(1) - wx1;
          const T g = gp[static_cast<std::size_t>(i) * target_w + j];
          r0[b.lo] += wy0 * wx0 * g;
          r0[b.hi] += wy0 * wx1 * g;
          r1[b.lo] += wy1 * wx0 * g;
          r1[b.hi] += wy1 * wx1 * g;
        }
      }
    }
  }
  return gx;
}

}  // namespace ducseg
