#pragma once

// Classical guided filtering and guided joint upsampling.
//
// Within every (2r+1)x(2r+1) window w_k (clipped at the image border) the
// output is modelled as an affine function of the guide, q = a_k I + b_k.
// The ridge-regression solution of that local model is
//
//   a_k = cov_k(I, p) / (var_k(I) + eps),   b_k = mean_k(p) - a_k mean_k(I),
//
// and each pixel averages the coefficients of every window that covers it:
//
//   q_i = abar_i I_i + bbar_i,  abar = box_mean(a), bbar = box_mean(b).
//
// All window statistics come from integral images, so the cost is O(h w)
// per channel regardless of r. Border windows are normalized by their true
// (clipped) area.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/ops/resize.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

struct GuidedFilterConfig {
  int radius = 4;
  double epsilon = 1e-4;

  void validate() const {
    if (radius < 1) throw ConfigError("guided filter radius must be >= 1");
    if (!(epsilon > 0.0)) throw ConfigError("guided filter epsilon must be positive");
  }
};

template <Real T>
struct CoefficientMaps {
  Tensor4<T> a_bar;
  Tensor4<T> b_bar;
};

namespace detail {

/// Windowed mean of one h x w plane via a (h+1) x (w+1) integral image.
inline std::vector<double> box_mean_plane(const double* src, int h, int w, int r) {
  const std::size_t stride = static_cast<std::size_t>(w) + 1;
  std::vector<double> integral((static_cast<std::size_t>(h) + 1) * stride, 0.0);
  for (int y = 0; y < h; ++y) {
    double row = 0.0;
    for (int x = 0; x < w; ++x) {
      row += src[static_cast<std::size_t>(y) * w + x];
      integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
      const double s = integral[y1 * stride + x1] - integral[y0 * stride + x1] -
                       integral[y1 * stride + x0] + integral[y0 * stride + x0];
      out[static_cast<std::size_t>(y) * w + x] = s / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

template <Real T>
std::vector<double> plane_as_double(const Tensor4<T>& x, int n, int c) {
  const T* p = x.plane(n, c);
  return std::vector<double>(p, p + x.shape().plane());
}

template <Real T>
void check_guide_target(const Tensor4<T>& guide, const Tensor4<T>& target, const char* op) {
  if (guide.n() != target.n() || guide.h() != target.h() || guide.w() != target.w()) {
    throw ShapeError(std::string(op) + ": guide " + to_string(guide.shape()) +
                     " and target " + to_string(target.shape()) + " differ spatially");
  }
  if (guide.c() != 1 && guide.c() != target.c()) {
    throw ShapeError(std::string(op) + ": guide must have 1 channel or match the target's " +
                     std::to_string(target.c()));
  }
}

}  // namespace detail

template <Real T>
Tensor4<T> box_mean(const Tensor4<T>& x, int r) {
  if (r < 1) throw ConfigError("box_mean: radius must be >= 1");
  Tensor4<T> out(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const auto src = detail::plane_as_double(x, n, c);
      const auto m = detail::box_mean_plane(src.data(), x.h(), x.w(), r);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < m.size(); ++i) dst[i] = static_cast<T>(m[i]);
    }
  }
  return out;
}

/// Window-averaged affine coefficients (abar, bbar) for filtering `target` with `guide`.
/// A single-channel guide serves every target channel; otherwise channels pair up.
template <Real T>
CoefficientMaps<T> guided_coefficients(const Tensor4<T>& guide, const Tensor4<T>& target,
                                       const GuidedFilterConfig& cfg) {
  cfg.validate();
  detail::check_guide_target(guide, target, "guided_filter");
  const int h = target.h(), w = target.w(), r = cfg.radius;
  const std::size_t plane = target.shape().plane();
  CoefficientMaps<T> out{Tensor4<T>(target.shape()), Tensor4<T>(target.shape())};
  for (int n = 0; n < target.n(); ++n) {
    for (int c = 0; c < target.c(); ++c) {
      const auto I = detail::plane_as_double(guide, n, guide.c() == 1 ? 0 : c);
      const auto p = detail::plane_as_double(target, n, c);
      std::vector<double> Ip(plane), II(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        Ip[i] = I[i] * p[i];
        II[i] = I[i] * I[i];
      }
      const auto mean_I = detail::box_mean_plane(I.data(), h, w, r);
      const auto mean_p = detail::box_mean_plane(p.data(), h, w, r);
      const auto mean_Ip = detail::box_mean_plane(Ip.data(), h, w, r);
      const auto mean_II = detail::box_mean_plane(II.data(), h, w, r);
      std::vector<double> a(plane), b(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        const double cov = mean_Ip[i] - mean_I[i] * mean_p[i];
        const double var = mean_II[i] - mean_I[i] * mean_I[i];
        a[i] = cov / (var + cfg.epsilon);
        b[i] = mean_p[i] - a[i] * mean_I[i];
      }
      const auto abar = detail::box_mean_plane(a.data(), h, w, r);
      const auto bbar = detail::box_mean_plane(b.data(), h, w, r);
      T* ap = out.a_bar.plane(n, c);
      T* bp = out.b_bar.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        ap[i] = static_cast<T>(abar[i]);
        bp[i] = static_cast<T>(bbar[i]);
      }
    }
  }
  return out;
}

namespace detail {

template <Real T>
Tensor4<T> apply_coefficients(const CoefficientMaps<T>& coeffs, const Tensor4<T>& guide) {
  Tensor4<T> out(coeffs.a_bar.shape());
  const std::size_t plane = out.shape().plane();
  for (int n = 0; n < out.n(); ++n) {
    for (int c = 0; c < out.c(); ++c) {
      const T* I = guide.plane(n, guide.c() == 1 ? 0 : c);
      const T* a = coeffs.a_bar.plane(n, c);
      const T* b = coeffs.b_bar.plane(n, c);
      T* q = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) q[i] = a[i] * I[i] + b[i];
    }
  }
  return out;
}

}  // namespace detail

template <Real T>
Tensor4<T> guided_filter(const Tensor4<T>& guide, const Tensor4<T>& target,
                         const GuidedFilterConfig& cfg) {
  return detail::apply_coefficients(guided_coefficients(guide, target, cfg), guide);
}

/// Guided joint upsampling: coefficients are solved at the target's (low)
/// resolution against a bilinearly downsampled guide, bilinearly upsampled,
/// and applied to the full-resolution guide.
template <Real T>
Tensor4<T> joint_upsample(const Tensor4<T>& target_lo, const Tensor4<T>& guide_hi,
                          const GuidedFilterConfig& cfg) {
  if (target_lo.h() < 1 || target_lo.w() < 1 || guide_hi.h() % target_lo.h() != 0 ||
      guide_hi.w() % target_lo.w() != 0) {
    throw ShapeError("joint_upsample: guide " + to_string(guide_hi.shape()) +
                     " is not an integer multiple of target " + to_string(target_lo.shape()));
  }
  if (guide_hi.n() != target_lo.n()) throw ShapeError("joint_upsample: batch sizes differ");
  const Tensor4<T> guide_lo = bilinear_resize_forward(guide_hi, target_lo.h(), target_lo.w());
  const auto lo = guided_coefficients(guide_lo, target_lo, cfg);
  const CoefficientMaps<T> hi{bilinear_resize_forward(lo.a_bar, guide_hi.h(), guide_hi.w()),
                              bilinear_resize_forward(lo.b_bar, guide_hi.h(), guide_hi.w())};
  return detail::apply_coefficients(hi, guide_hi);
}

/// Peak signal-to-noise ratio in dB for signals with the given peak value.
template <Real T>
double psnr(const Tensor4<T>& estimate, const Tensor4<T>& reference, double peak = 1.0) {
  detail::require_same_shape(estimate, reference, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = static_cast<double>(estimate[i]) - static_cast<double>(reference[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(estimate.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace ducseg
