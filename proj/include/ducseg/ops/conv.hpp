#pragma once

// Dilated, strided 2-D cross-correlation with zero padding.
//
// Accumulation order is part of the contract: every output element starts
// at zero, adds w * x for input channel, kernel row and kernel column in
// lexicographic order (taps landing in the padding add an exact zero), and
// adds the bias last. A naive nested-loop oracle written in the same order
// reproduces forward results bit-for-bit when floating-point contraction
// is disabled.
//
// Both passes lower the convolution to a matrix product over an im2col
// buffer whose columns span the whole batch, so that the inner loops run
// over n * ho * wo contiguous values even when the planes are tiny.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/params.hpp"
#include "ducseg/rng.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

struct ConvSpec {
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  int in_channels = 1;
  int out_channels = 1;

  /// Input extent actually covered by one kernel application.
  constexpr int effective_extent() const noexcept { return dilation * (kernel - 1) + 1; }

  constexpr int output_extent(int input) const noexcept {
    return (input + 2 * padding - effective_extent()) / stride + 1;
  }

  void validate() const {
    if (kernel < 1 || stride < 1 || dilation < 1 || padding < 0 || in_channels < 1 ||
        out_channels < 1) {
      throw ConfigError("ConvSpec: kernel, stride, dilation and channels must be positive, "
                        "padding nonnegative");
    }
  }

  friend constexpr bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// 1x1 convolution between the given channel counts.
constexpr ConvSpec pointwise(int in, int out) { return ConvSpec{1, 1, 1, 0, in, out}; }

/// 3x3 convolution with "same" padding for stride 1.
constexpr ConvSpec conv3x3(int in, int out, int stride = 1, int dilation = 1) {
  return ConvSpec{3, stride, dilation, dilation, in, out};
}

template <Real T>
struct ConvParams {
  Tensor4<T> weight;  // (out, in, k, k)
  std::vector<T> bias;

  template <class F>
  void visit(F&& f, std::string_view prefix = {}) {
    f(join_name(prefix, "weight"), weight.data());
    f(join_name(prefix, "bias"), std::span<T>(bias));
  }
  template <class F>
  void visit_buffers(F&&, std::string_view = {}) {}

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

/// Zero-filled parameters (and gradient accumulators) shaped for `spec`.
template <Real T>
ConvParams<T> zero_conv_params(const ConvSpec& spec) {
  return ConvParams<T>{Tensor4<T>({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
                       std::vector<T>(static_cast<std::size_t>(spec.out_channels), T(0))};
}

/// Kaiming fan-in initialization: weights ~ N(0, 2 / (in * k * k)), zero bias.
template <Real T>
ConvParams<T> init_conv_params(const ConvSpec& spec, SplitMix64& rng) {
  spec.validate();
  ConvParams<T> p = zero_conv_params<T>(spec);
  const double fan_in = static_cast<double>(spec.in_channels) * spec.kernel * spec.kernel;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : p.weight.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return p;
}

template <Real T>
struct ConvGrads {
  Tensor4<T> grad_x;  // empty when not requested
  ConvParams<T> params;
};

namespace detail {

template <Real T>
void check_conv_call(const Tensor4<T>& x, const ConvSpec& spec, const ConvParams<T>& params) {
  spec.validate();
  if (x.c() != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  const Shape4 wshape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (params.weight.shape() != wshape ||
      params.bias.size() != static_cast<std::size_t>(spec.out_channels)) {
    throw ShapeError("conv2d: parameter shape " + to_string(params.weight.shape()) +
                     " inconsistent with spec " + to_string(wshape));
  }
  const int ext = spec.effective_extent();
  if (ext > x.h() + 2 * spec.padding || ext > x.w() + 2 * spec.padding) {
    throw ShapeError("conv2d: effective kernel extent " + std::to_string(ext) +
                     " exceeds padded input " + to_string(x.shape()));
  }
}

/// Geometry of one convolution call lowered to a matrix product.
struct ConvGeometry {
  int n, cin, h, w, k, s, d, p, ho, wo;
  std::size_t plane_out() const { return static_cast<std::size_t>(ho) * wo; }
  std::size_t cols() const { return static_cast<std::size_t>(n) * plane_out(); }
  std::size_t rows() const { return static_cast<std::size_t>(cin) * k * k; }
};

inline ConvGeometry geometry(const Shape4& xs, const ConvSpec& spec) {
  return {xs.n,         xs.c,         xs.h,        xs.w,
          spec.kernel,  spec.stride,  spec.dilation, spec.padding,
          spec.output_extent(xs.h), spec.output_extent(xs.w)};
}

/// Row (ci, ky, kx), column (n, oy, ox) holds x(n, ci, oy*s + ky*d - p, ox*s + kx*d - p),
/// zero outside the input.
template <Real T>
std::vector<T> im2col(const Tensor4<T>& x, const ConvGeometry& g) {
  const std::size_t cols = g.cols(), po = g.plane_out();
  std::vector<T> col(g.rows() * cols, T(0));
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col.data() + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * cols;
        const int yoff = ky * g.d - g.p, xoff = kx * g.d - g.p;
        for (int n = 0; n < g.n; ++n) {
          const T* xp = x.plane(n, ci);
          T* dst = row + static_cast<std::size_t>(n) * po;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.s + yoff;
            if (iy < 0 || iy >= g.h) continue;
            const T* xr = xp + static_cast<std::size_t>(iy) * g.w;
            T* dr = dst + static_cast<std::size_t>(oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.s + xoff;
              if (ix >= 0 && ix < g.w) dr[ox] = xr[ix];
            }
          }
        }
      }
    }
  }
  return col;
}

/// Adjoint of im2col: scatters column gradients back onto the input.
template <Real T>
void col2im(const std::vector<T>& col, const ConvGeometry& g, Tensor4<T>& gx) {
  const std::size_t cols = g.cols(), po = g.plane_out();
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col.data() + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * cols;
        const int yoff = ky * g.d - g.p, xoff = kx * g.d - g.p;
        for (int n = 0; n < g.n; ++n) {
          T* gp = gx.plane(n, ci);
          const T* src = row + static_cast<std::size_t>(n) * po;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.s + yoff;
            if (iy < 0 || iy >= g.h) continue;
            T* gr = gp + static_cast<std::size_t>(iy) * g.w;
            const T* sr = src + static_cast<std::size_t>(oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.s + xoff;
              if (ix >= 0 && ix < g.w) gr[ix] += sr[ox];
            }
          }
        }
      }
    }
  }
}

inline constexpr std::size_t kColTile = 256;
inline constexpr int kRowBlock = 4;

}  // namespace detail

template <Real T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvSpec& spec, const ConvParams<T>& params) {
  detail::check_conv_call(x, spec, params);
  const auto g = detail::geometry(x.shape(), spec);
  const std::vector<T> col = detail::im2col(x, g);
  const std::size_t cols = g.cols(), rows = g.rows(), po = g.plane_out();
  const int cout = spec.out_channels;
  const T* wd = params.weight.data().data();
  Tensor4<T> y({g.n, cout, g.ho, g.wo});

  T acc[detail::kRowBlock][detail::kColTile];
  for (std::size_t j0 = 0; j0 < cols; j0 += detail::kColTile) {
    const std::size_t len = std::min(detail::kColTile, cols - j0);
    for (int co0 = 0; co0 < cout; co0 += detail::kRowBlock) {
      const int nb = std::min(detail::kRowBlock, cout - co0);
      for (int b = 0; b < nb; ++b) std::fill_n(acc[b], len, T(0));
      for (std::size_t r = 0; r < rows; ++r) {
        const T* c = col.data() + r * cols + j0;
        for (int b = 0; b < nb; ++b) {
          const T wv = wd[static_cast<std::size_t>(co0 + b) * rows + r];
          T* a = acc[b];
          for (std::size_t j = 0; j < len; ++j) a[j] += wv * c[j];
        }
      }
      for (int b = 0; b < nb; ++b) {
        const int co = co0 + b;
        const T bias = params.bias[static_cast<std::size_t>(co)];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t jj = j0 + j;
          const int n = static_cast<int>(jj / po);
          y.plane(n, co)[jj % po] = acc[b][j] + bias;
        }
      }
    }
  }
  return y;
}

/// Gradients of sum(grad_out * conv2d_forward(x)) with respect to x, weights and bias.
template <Real T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvSpec& spec, const ConvParams<T>& params,
                             const Tensor4<T>& grad_out, bool need_grad_x = true) {
  detail::check_conv_call(x, spec, params);
  const auto g = detail::geometry(x.shape(), spec);
  const Shape4 expected{g.n, spec.out_channels, g.ho, g.wo};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                     " differs from forward output " + to_string(expected));
  }
  const std::size_t cols = g.cols(), rows = g.rows(), po = g.plane_out();
  const int cout = spec.out_channels;

  // grad_out as a (cout, cols) matrix.
  std::vector<T> gm(static_cast<std::size_t>(cout) * cols);
  for (int co = 0; co < cout; ++co) {
    for (int n = 0; n < g.n; ++n) {
      std::copy_n(grad_out.plane(n, co), po,
                  gm.data() + static_cast<std::size_t>(co) * cols + static_cast<std::size_t>(n) * po);
    }
  }

  ConvGrads<T> out{need_grad_x ? Tensor4<T>(x.shape()) : Tensor4<T>{}, zero_conv_params<T>(spec)};
  for (int co = 0; co < cout; ++co) {
    double total = 0.0;
    const T* gr = gm.data() + static_cast<std::size_t>(co) * cols;
    for (std::size_t j = 0; j < cols; ++j) total += gr[j];
    out.params.bias[static_cast<std::size_t>(co)] = static_cast<T>(total);
  }

  // Weight gradient: dot products of grad rows with im2col rows, in 8 lanes.
  constexpr std::size_t L = 8;
  const std::vector<T> col = detail::im2col(x, g);
  T* gw = out.params.weight.data().data();
  const std::size_t body = cols - cols % L;
  for (int co = 0; co < cout; ++co) {
    const T* gr = gm.data() + static_cast<std::size_t>(co) * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* c = col.data() + r * cols;
      double lanes[L] = {};
      for (std::size_t j = 0; j < body; j += L) {
        for (std::size_t l = 0; l < L; ++l) lanes[l] += static_cast<double>(gr[j + l]) * c[j + l];
      }
      double total = 0.0;
      for (std::size_t l = 0; l < L; ++l) total += lanes[l];
      for (std::size_t j = body; j < cols; ++j) total += static_cast<double>(gr[j]) * c[j];
      gw[static_cast<std::size_t>(co) * rows + r] = static_cast<T>(total);
    }
  }

  if (need_grad_x) {
    // Column gradient W^T * G, then scattered back by col2im.
    std::vector<T> gcol(rows * cols, T(0));
    const T* wd = params.weight.data().data();
    for (std::size_t j0 = 0; j0 < cols; j0 += detail::kColTile) {
      const std::size_t len = std::min(detail::kColTile, cols - j0);
      for (std::size_t r = 0; r < rows; ++r) {
        T* a = gcol.data() + r * cols + j0;
        for (int co = 0; co < cout; ++co) {
          const T wv = wd[static_cast<std::size_t>(co) * rows + r];
          const T* gr = gm.data() + static_cast<std::size_t>(co) * cols + j0;
          for (std::size_t j = 0; j < len; ++j) a[j] += wv * gr[j];
        }
      }
    }
    detail::col2im(gcol, g, out.grad_x);
  }
  return out;
}

}  // namespace ducseg
