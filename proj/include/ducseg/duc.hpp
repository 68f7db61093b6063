#pragma once

// Dense upsampling convolution (DUC).
//
// Lifts a deep low-resolution feature map I_l to the resolution of an
// intermediate feature map I_m, using guidance computed from the
// full-resolution image I_h, then appends I_m's channels:
//
//   G_h   = g2(ReLU(BN(g1(I_h))))              1x1 convs, full resolution
//   Gt_h  = stride_conv(G_h)                   3x3, stride = guide_stride
//   It_l  = lowres_conv(I_l)                   3x3, dilation = lowres_dilation
//   R     = bilinear(It_l -> size of I_m)
//   abar  = coeff_a([Gt_h, R]),  bbar = coeff_b([Gt_h, R])      1x1 convs
//   U     = abar * Gt_h + bbar                 guided affine model, elementwise
//   out   = [U, I_m]
//
// The affine step mirrors q = abar * I + bbar from guided filtering with the
// learned guidance Gt_h standing in for the image.

#include <string>
#include <utility>

#include "ducseg/errors.hpp"
#include "ducseg/ops/activation.hpp"
#include "ducseg/ops/batchnorm.hpp"
#include "ducseg/ops/conv.hpp"
#include "ducseg/ops/resize.hpp"
#include "ducseg/params.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

struct DucConfig {
  int guidance_channels = 8;
  int guide_stride = 4;
  int lowres_dilation = 2;
  int out_channels = 32;

  void validate() const {
    if (guidance_channels < 1 || out_channels < 1) {
      throw ConfigError("DucConfig: channel counts must be >= 1");
    }
    if (guide_stride < 1 || lowres_dilation < 1) {
      throw ConfigError("DucConfig: guide_stride and lowres_dilation must be >= 1");
    }
  }

  friend bool operator==(const DucConfig&, const DucConfig&) = default;
};

/// Convolution shapes of every DUC stage for the given input channel counts.
struct DucSpecs {
  ConvSpec g1, g2, stride_conv, lowres_conv, coeff;

  DucSpecs(const DucConfig& cfg, int image_channels, int lowres_channels) {
    cfg.validate();
    const int G = cfg.guidance_channels, C = cfg.out_channels;
    g1 = pointwise(image_channels, G);
    g2 = pointwise(G, G);
    stride_conv = ConvSpec{3, cfg.guide_stride, 1, 1, G, C};
    lowres_conv = ConvSpec{3, 1, cfg.lowres_dilation, cfg.lowres_dilation, lowres_channels, C};
    coeff = pointwise(2 * C, C);
  }
};

template <Real T>
struct DucParams {
  ConvParams<T> g1;
  BatchNormState<T> bn;
  ConvParams<T> g2;
  ConvParams<T> stride_conv;
  ConvParams<T> lowres_conv;
  ConvParams<T> coeff_a;
  ConvParams<T> coeff_b;

  template <class F>
  void visit(F&& f, std::string_view prefix = {}) {
    g1.visit(f, join_name(prefix, "g1"));
    bn.visit(f, join_name(prefix, "bn"));
    g2.visit(f, join_name(prefix, "g2"));
    stride_conv.visit(f, join_name(prefix, "stride_conv"));
    lowres_conv.visit(f, join_name(prefix, "lowres_conv"));
    coeff_a.visit(f, join_name(prefix, "coeff_a"));
    coeff_b.visit(f, join_name(prefix, "coeff_b"));
  }
  template <class F>
  void visit_buffers(F&& f, std::string_view prefix = {}) {
    bn.visit_buffers(f, join_name(prefix, "bn"));
  }
};

template <Real T>
DucParams<T> init_duc_params(const DucConfig& cfg, int image_channels, int lowres_channels,
                             SplitMix64& rng) {
  const DucSpecs s(cfg, image_channels, lowres_channels);
  return DucParams<T>{init_conv_params<T>(s.g1, rng),          make_batchnorm<T>(cfg.guidance_channels),
                      init_conv_params<T>(s.g2, rng),          init_conv_params<T>(s.stride_conv, rng),
                      init_conv_params<T>(s.lowres_conv, rng), init_conv_params<T>(s.coeff, rng),
                      init_conv_params<T>(s.coeff, rng)};
}

template <Real T>
DucParams<T> zero_duc_grads(const DucConfig& cfg, const DucParams<T>& params) {
  const DucSpecs s(cfg, params.g1.weight.c(), params.lowres_conv.weight.c());
  return DucParams<T>{zero_conv_params<T>(s.g1),          zero_batchnorm_grads(params.bn),
                      zero_conv_params<T>(s.g2),          zero_conv_params<T>(s.stride_conv),
                      zero_conv_params<T>(s.lowres_conv), zero_conv_params<T>(s.coeff),
                      zero_conv_params<T>(s.coeff)};
}

/// Intermediates retained by duc_forward for the backward pass.
template <Real T>
struct DucCache {
  Mode mode = Mode::eval;
  Tensor4<T> image, lowres;
  Shape4 intermediate_shape;
  Tensor4<T> z1;        // g1(I_h), batch-norm input
  Tensor4<T> y1;        // BN output, ReLU input
  Tensor4<T> r1;        // ReLU output
  Tensor4<T> guidance;  // G_h
  Tensor4<T> guide_lo;  // Gt_h
  Tensor4<T> feat_lo;   // It_l
  Tensor4<T> coeff_in;  // [Gt_h, R]
  Tensor4<T> a_bar;
  Tensor4<T> b_bar;
};

template <Real T>
struct DucResult {
  Tensor4<T> output;
  Tensor4<T> upsampled;  // U, the guided branch before concatenation
  DucCache<T> cache;
};

template <Real T>
struct DucGrads {
  DucParams<T> params;
  Tensor4<T> grad_lowres;
  Tensor4<T> grad_intermediate;
  Tensor4<T> grad_image;
};

namespace detail {

/// Runs f, prefixing any shape error with the DUC stage that raised it.
template <class F>
decltype(auto) duc_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("duc stage '") + stage + "': " + e.what());
  }
}

template <Real T>
void check_duc_inputs(const Tensor4<T>& image, const Tensor4<T>& lowres,
                      const Tensor4<T>& intermediate, const DucConfig& cfg) {
  auto fail = [](const char* stage, const std::string& msg) {
    return ShapeError(std::string("duc stage '") + stage + "': " + msg);
  };
  if (image.n() != lowres.n() || image.n() != intermediate.n()) {
    throw fail("inputs", "batch sizes of I_h, I_l, I_m differ");
  }
  const int s = cfg.guide_stride;
  if (image.h() % s != 0 || image.w() % s != 0) {
    throw fail("stride_conv", "image " + to_string(image.shape()) +
                                  " is not divisible by guide_stride " + std::to_string(s));
  }
  if (intermediate.h() != image.h() / s || intermediate.w() != image.w() / s) {
    throw fail("concat", "I_m " + to_string(intermediate.shape()) + " must be image size / " +
                             std::to_string(s));
  }
  if (lowres.h() >= intermediate.h() || lowres.w() >= intermediate.w()) {
    throw fail("resize", "I_l " + to_string(lowres.shape()) +
                             " must be strictly smaller than I_m " + to_string(intermediate.shape()));
  }
}

}  // namespace detail

template <Real T>
DucResult<T> duc_forward(const Tensor4<T>& image, const Tensor4<T>& lowres,
                         const Tensor4<T>& intermediate, const DucConfig& cfg,
                         DucParams<T>& params, Mode mode) {
  cfg.validate();
  detail::check_duc_inputs(image, lowres, intermediate, cfg);
  const DucSpecs s(cfg, image.c(), lowres.c());

  DucResult<T> r;
  DucCache<T>& c = r.cache;
  c.mode = mode;
  c.image = image;
  c.lowres = lowres;
  c.intermediate_shape = intermediate.shape();

  c.z1 = detail::duc_stage("g1", [&] { return conv2d_forward(image, s.g1, params.g1); });
  c.y1 = detail::duc_stage("bn", [&] { return batchnorm_forward(c.z1, params.bn, mode); });
  c.r1 = relu_forward(c.y1);
  c.guidance = detail::duc_stage("g2", [&] { return conv2d_forward(c.r1, s.g2, params.g2); });
  c.guide_lo = detail::duc_stage(
      "stride_conv", [&] { return conv2d_forward(c.guidance, s.stride_conv, params.stride_conv); });
  c.feat_lo = detail::duc_stage(
      "lowres_conv", [&] { return conv2d_forward(lowres, s.lowres_conv, params.lowres_conv); });
  const Tensor4<T> resized =
      bilinear_resize_forward(c.feat_lo, intermediate.h(), intermediate.w());
  c.coeff_in = detail::duc_stage("coeff", [&] { return concat_channels(c.guide_lo, resized); });
  c.a_bar = detail::duc_stage("coeff_a",
                              [&] { return conv2d_forward(c.coeff_in, s.coeff, params.coeff_a); });
  c.b_bar = detail::duc_stage("coeff_b",
                              [&] { return conv2d_forward(c.coeff_in, s.coeff, params.coeff_b); });

  r.upsampled = c.b_bar;
  for (std::size_t i = 0; i < r.upsampled.size(); ++i) {
    r.upsampled[i] += c.a_bar[i] * c.guide_lo[i];
  }
  r.output = detail::duc_stage("concat", [&] { return concat_channels(r.upsampled, intermediate); });
  return r;
}

/// Reverse-mode pass through every DUC stage, output back to the inputs.
template <Real T>
DucGrads<T> duc_backward(const DucCache<T>& c, const DucConfig& cfg, const DucParams<T>& params,
                         const Tensor4<T>& grad_out) {
  const DucSpecs s(cfg, c.image.c(), c.lowres.c());
  const int C = cfg.out_channels;
  const Shape4 expected{c.intermediate_shape.n, C + c.intermediate_shape.c,
                        c.intermediate_shape.h, c.intermediate_shape.w};
  if (grad_out.shape() != expected) {
    throw ShapeError("duc_backward: grad_out " + to_string(grad_out.shape()) +
                     " differs from forward output " + to_string(expected));
  }

  DucGrads<T> g;
  const Tensor4<T> grad_u = slice_channels(grad_out, 0, C);
  g.grad_intermediate = slice_channels(grad_out, C, c.intermediate_shape.c);

  // U = abar * Gt + bbar
  Tensor4<T> grad_a = multiply(grad_u, c.guide_lo);
  Tensor4<T> grad_guide_lo = multiply(grad_u, c.a_bar);

  auto ga = conv2d_backward(c.coeff_in, s.coeff, params.coeff_a, grad_a);
  auto gb = conv2d_backward(c.coeff_in, s.coeff, params.coeff_b, grad_u);
  accumulate_into(ga.grad_x, gb.grad_x);
  accumulate_into(grad_guide_lo, slice_channels(ga.grad_x, 0, C));
  const Tensor4<T> grad_resized = slice_channels(ga.grad_x, C, C);

  const Tensor4<T> grad_feat_lo = bilinear_resize_backward(
      c.feat_lo.shape(), c.intermediate_shape.h, c.intermediate_shape.w, grad_resized);
  auto gl = conv2d_backward(c.lowres, s.lowres_conv, params.lowres_conv, grad_feat_lo);
  auto gs = conv2d_backward(c.guidance, s.stride_conv, params.stride_conv, grad_guide_lo);
  auto g2 = conv2d_backward(c.r1, s.g2, params.g2, gs.grad_x);
  const Tensor4<T> grad_y1 = relu_backward(c.y1, g2.grad_x);
  auto gbn = batchnorm_backward(c.z1, params.bn, c.mode, grad_y1);
  auto g1 = conv2d_backward(c.image, s.g1, params.g1, gbn.grad_x);

  g.params = DucParams<T>{std::move(g1.params), std::move(gbn.params), std::move(g2.params),
                          std::move(gs.params), std::move(gl.params),  std::move(ga.params),
                          std::move(gb.params)};
  g.grad_lowres = std::move(gl.grad_x);
  g.grad_image = std::move(g1.grad_x);
  return g;
}

}  // namespace ducseg
