#pragma once

// Small residual encoder with two feature taps.
//
//   stem:   conv3x3 -> BN -> ReLU                   full resolution
//   stage s: blocks_per_stage basic blocks; the first block of each stage
//            applies strides[s] and changes width to widths[s].
//   block:  y = ReLU(BN(conv3x3(ReLU(BN(conv3x3_stride(x))))) + skip(x))
//           skip = identity, or a strided 1x1 projection when shape changes.
//
// I_m is the output of stage tap_im and I_l the output of stage tap_il.
// Stages after tap_il are never evaluated.

#include <numeric>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/ops/activation.hpp"
#include "ducseg/ops/batchnorm.hpp"
#include "ducseg/ops/conv.hpp"
#include "ducseg/params.hpp"
#include "ducseg/rng.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

struct BackboneConfig {
  int in_channels = 3;
  int stem_channels = 16;
  std::vector<int> widths{16, 32, 64, 128};
  std::vector<int> strides{2, 2, 2, 2};
  int blocks_per_stage = 2;
  int tap_im = 1;  // stage index (0-based) whose output is I_m: 1/4 with the default ladder
  int tap_il = 3;  // deepest stage: 1/16

  int stage_count() const noexcept { return static_cast<int>(widths.size()); }

  void validate() const {
    if (in_channels < 1 || stem_channels < 1) throw ConfigError("BackboneConfig: channels must be >= 1");
    if (widths.empty() || widths.size() != strides.size()) {
      throw ConfigError("BackboneConfig: widths and strides must be nonempty and equally long");
    }
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] < 1 || strides[i] < 1) {
        throw ConfigError("BackboneConfig: widths and strides must be >= 1");
      }
    }
    if (blocks_per_stage < 1) throw ConfigError("BackboneConfig: blocks_per_stage must be >= 1");
    if (tap_im < 0 || tap_il >= stage_count() || tap_im >= tap_il) {
      throw ConfigError("BackboneConfig: need 0 <= tap_im < tap_il < stage count");
    }
  }

  /// Product of the strides of stages 0..stage.
  int stride_to(int stage) const {
    int s = 1;
    for (int i = 0; i <= stage; ++i) s *= strides[static_cast<std::size_t>(i)];
    return s;
  }
  int required_divisor() const { return stride_to(tap_il); }
  int im_channels() const { return widths[static_cast<std::size_t>(tap_im)]; }
  int il_channels() const { return widths[static_cast<std::size_t>(tap_il)]; }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

template <Real T>
struct ResidualBlockParams {
  ConvParams<T> conv1;
  BatchNormState<T> bn1;
  ConvParams<T> conv2;
  BatchNormState<T> bn2;
  bool has_projection = false;
  ConvParams<T> projection;

  template <class F>
  void visit(F&& f, std::string_view prefix = {}) {
    conv1.visit(f, join_name(prefix, "conv1"));
    bn1.visit(f, join_name(prefix, "bn1"));
    conv2.visit(f, join_name(prefix, "conv2"));
    bn2.visit(f, join_name(prefix, "bn2"));
    if (has_projection) projection.visit(f, join_name(prefix, "projection"));
  }
  template <class F>
  void visit_buffers(F&& f, std::string_view prefix = {}) {
    bn1.visit_buffers(f, join_name(prefix, "bn1"));
    bn2.visit_buffers(f, join_name(prefix, "bn2"));
  }
};

template <Real T>
struct BackboneParams {
  ConvParams<T> stem;
  BatchNormState<T> stem_bn;
  std::vector<std::vector<ResidualBlockParams<T>>> stages;

  template <class F>
  void visit(F&& f, std::string_view prefix = {}) {
    stem.visit(f, join_name(prefix, "stem"));
    stem_bn.visit(f, join_name(prefix, "stem_bn"));
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        stages[s][b].visit(f, join_name(prefix, "stage" + std::to_string(s) + ".block" +
                                                    std::to_string(b)));
      }
    }
  }
  template <class F>
  void visit_buffers(F&& f, std::string_view prefix = {}) {
    stem_bn.visit_buffers(f, join_name(prefix, "stem_bn"));
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        stages[s][b].visit_buffers(f, join_name(prefix, "stage" + std::to_string(s) + ".block" +
                                                            std::to_string(b)));
      }
    }
  }
};

namespace detail {

struct BlockSpecs {
  ConvSpec conv1, conv2, projection;
  bool has_projection;
};

inline BlockSpecs block_specs(int in, int out, int stride) {
  return {conv3x3(in, out, stride), conv3x3(out, out), ConvSpec{1, stride, 1, 0, in, out},
          stride != 1 || in != out};
}

/// Calls f(stage, block, in_channels, out_channels, stride) for every evaluated block.
template <class F>
void for_each_block(const BackboneConfig& cfg, F&& f) {
  int in = cfg.stem_channels;
  for (int s = 0; s <= cfg.tap_il; ++s) {
    const int out = cfg.widths[static_cast<std::size_t>(s)];
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      f(s, b, in, out, b == 0 ? cfg.strides[static_cast<std::size_t>(s)] : 1);
      in = out;
    }
  }
}

}  // namespace detail

template <Real T>
BackboneParams<T> init_backbone_params(const BackboneConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  BackboneParams<T> p;
  p.stem = init_conv_params<T>(conv3x3(cfg.in_channels, cfg.stem_channels), rng);
  p.stem_bn = make_batchnorm<T>(cfg.stem_channels);
  p.stages.resize(static_cast<std::size_t>(cfg.tap_il) + 1);
  detail::for_each_block(cfg, [&](int s, int, int in, int out, int stride) {
    const auto sp = detail::block_specs(in, out, stride);
    ResidualBlockParams<T> b;
    b.conv1 = init_conv_params<T>(sp.conv1, rng);
    b.bn1 = make_batchnorm<T>(out);
    b.conv2 = init_conv_params<T>(sp.conv2, rng);
    b.bn2 = make_batchnorm<T>(out);
    b.has_projection = sp.has_projection;
    if (sp.has_projection) b.projection = init_conv_params<T>(sp.projection, rng);
    p.stages[static_cast<std::size_t>(s)].push_back(std::move(b));
  });
  return p;
}

template <Real T>
struct BlockCache {
  Tensor4<T> x, z1, y1, r1, z2, pre;  // pre = BN2 output + skip, before the final ReLU
};

template <Real T>
struct BackboneCache {
  Mode mode = Mode::eval;
  Tensor4<T> image, stem_z, stem_y;
  std::vector<std::vector<BlockCache<T>>> blocks;
  Shape4 im_shape, il_shape;
};

template <Real T>
struct BackboneResult {
  Tensor4<T> im;
  Tensor4<T> il;
  BackboneCache<T> cache;
};

template <Real T>
struct BackboneGrads {
  BackboneParams<T> params;
  Tensor4<T> grad_image;
};

namespace detail {

template <Real T>
Tensor4<T> block_forward(const Tensor4<T>& x, const BlockSpecs& sp, ResidualBlockParams<T>& p,
                         Mode mode, BlockCache<T>& c) {
  c.x = x;
  c.z1 = conv2d_forward(x, sp.conv1, p.conv1);
  c.y1 = batchnorm_forward(c.z1, p.bn1, mode);
  c.r1 = relu_forward(c.y1);
  c.z2 = conv2d_forward(c.r1, sp.conv2, p.conv2);
  c.pre = batchnorm_forward(c.z2, p.bn2, mode);
  if (sp.has_projection) {
    accumulate_into(c.pre, conv2d_forward(x, sp.projection, p.projection));
  } else {
    accumulate_into(c.pre, x);
  }
  return relu_forward(c.pre);
}

template <Real T>
Tensor4<T> block_backward(const BlockCache<T>& c, const BlockSpecs& sp,
                          const ResidualBlockParams<T>& p, Mode mode, const Tensor4<T>& grad_out,
                          ResidualBlockParams<T>& g) {
  const Tensor4<T> grad_pre = relu_backward(c.pre, grad_out);
  auto gbn2 = batchnorm_backward(c.z2, p.bn2, mode, grad_pre);
  auto gc2 = conv2d_backward(c.r1, sp.conv2, p.conv2, gbn2.grad_x);
  const Tensor4<T> grad_y1 = relu_backward(c.y1, gc2.grad_x);
  auto gbn1 = batchnorm_backward(c.z1, p.bn1, mode, grad_y1);
  auto gc1 = conv2d_backward(c.x, sp.conv1, p.conv1, gbn1.grad_x);
  Tensor4<T> grad_x = std::move(gc1.grad_x);
  g.conv1 = std::move(gc1.params);
  g.bn1 = std::move(gbn1.params);
  g.conv2 = std::move(gc2.params);
  g.bn2 = std::move(gbn2.params);
  g.has_projection = sp.has_projection;
  if (sp.has_projection) {
    auto gp = conv2d_backward(c.x, sp.projection, p.projection, grad_pre);
    accumulate_into(grad_x, gp.grad_x);
    g.projection = std::move(gp.params);
  } else {
    accumulate_into(grad_x, grad_pre);
  }
  return grad_x;
}

}  // namespace detail

template <Real T>
BackboneResult<T> backbone_forward(const Tensor4<T>& image, const BackboneConfig& cfg,
                                   BackboneParams<T>& params, Mode mode) {
  cfg.validate();
  if (image.c() != cfg.in_channels) {
    throw ShapeError("backbone: image has " + std::to_string(image.c()) + " channels, expected " +
                     std::to_string(cfg.in_channels));
  }
  const int div = cfg.required_divisor();
  if (image.h() % div != 0 || image.w() % div != 0) {
    throw ShapeError("backbone: image " + to_string(image.shape()) +
                     " is not divisible by the stride product " + std::to_string(div));
  }
  BackboneResult<T> r;
  BackboneCache<T>& c = r.cache;
  c.mode = mode;
  c.image = image;
  c.stem_z = conv2d_forward(image, conv3x3(cfg.in_channels, cfg.stem_channels), params.stem);
  c.stem_y = batchnorm_forward(c.stem_z, params.stem_bn, mode);
  Tensor4<T> x = relu_forward(c.stem_y);
  c.blocks.resize(static_cast<std::size_t>(cfg.tap_il) + 1);
  detail::for_each_block(cfg, [&](int s, int b, int in, int out, int stride) {
    auto& cache = c.blocks[static_cast<std::size_t>(s)].emplace_back();
    x = detail::block_forward(x, detail::block_specs(in, out, stride),
                              params.stages[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)],
                              mode, cache);
    if (b == cfg.blocks_per_stage - 1 && s == cfg.tap_im) r.im = x;
  });
  r.il = std::move(x);
  c.im_shape = r.im.shape();
  c.il_shape = r.il.shape();
  return r;
}

/// Reverse pass; gradients arriving at the two taps are summed where the paths merge.
template <Real T>
BackboneGrads<T> backbone_backward(const BackboneCache<T>& c, const BackboneConfig& cfg,
                                   const BackboneParams<T>& params, const Tensor4<T>& grad_im,
                                   const Tensor4<T>& grad_il) {
  if (grad_im.shape() != c.im_shape || grad_il.shape() != c.il_shape) {
    throw ShapeError("backbone_backward: tap gradients " + to_string(grad_im.shape()) + ", " +
                     to_string(grad_il.shape()) + " differ from taps " + to_string(c.im_shape) +
                     ", " + to_string(c.il_shape));
  }
  BackboneGrads<T> g;
  g.params.stages.resize(params.stages.size());
  for (std::size_t s = 0; s < params.stages.size(); ++s) g.params.stages[s].resize(params.stages[s].size());

  // Walk the blocks in reverse; remember each block's (in, out, stride).
  struct Entry {
    int s, b, in, out, stride;
  };
  std::vector<Entry> order;
  detail::for_each_block(cfg, [&](int s, int b, int in, int out, int stride) {
    order.push_back({s, b, in, out, stride});
  });
  Tensor4<T> grad = grad_il;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto si = static_cast<std::size_t>(it->s), bi = static_cast<std::size_t>(it->b);
    if (it->s == cfg.tap_im && it->b == cfg.blocks_per_stage - 1) accumulate_into(grad, grad_im);
    grad = detail::block_backward(c.blocks[si][bi], detail::block_specs(it->in, it->out, it->stride),
                                  params.stages[si][bi], c.mode, grad, g.params.stages[si][bi]);
  }
  const Tensor4<T> grad_stem_y = relu_backward(c.stem_y, grad);
  auto gbn = batchnorm_backward(c.stem_z, params.stem_bn, c.mode, grad_stem_y);
  auto gstem =
      conv2d_backward(c.image, conv3x3(cfg.in_channels, cfg.stem_channels), params.stem, gbn.grad_x);
  g.params.stem = std::move(gstem.params);
  g.params.stem_bn = std::move(gbn.params);
  g.grad_image = std::move(gstem.grad_x);
  return g;
}

}  // namespace ducseg
