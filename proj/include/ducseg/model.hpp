#pragma once

// Full segmentation network.
//
//   duc decoder:      backbone -> DUC(I_h, I_l, I_m) -> DLC -> 1x1 classifier -> resize to input
//   bilinear decoder: backbone -> bilinear(I_l to I_m size) -> DLC -> 1x1 classifier -> resize
//
// The bilinear decoder is the ablation baseline: same backbone, same DLC
// widths and classifier, but no guidance branch and no intermediate
// features.

#include <optional>
#include <string>

#include "ducseg/backbone.hpp"
#include "ducseg/dlc.hpp"
#include "ducseg/duc.hpp"
#include "ducseg/errors.hpp"
#include "ducseg/ops/conv.hpp"
#include "ducseg/ops/resize.hpp"
#include "ducseg/params.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

enum class Decoder { duc, bilinear };

inline std::string to_string(Decoder d) { return d == Decoder::duc ? "duc" : "bilinear"; }

inline Decoder parse_decoder(const std::string& s) {
  if (s == "duc") return Decoder::duc;
  if (s == "bilinear") return Decoder::bilinear;
  throw ConfigError("decoder must be 'duc' or 'bilinear', got '" + s + "'");
}

struct ModelConfig {
  int num_classes = 4;
  Decoder decoder = Decoder::duc;
  BackboneConfig backbone;
  DucConfig duc{8, 4, 2, 32};
  // in_channels is derived from the decoder output and overwritten by resolved().
  DlcConfig dlc{0, 32, 16, 16, 32, {3, 6, 12, 18}};

  /// Copy with derived fields filled in and every invariant checked.
  ModelConfig resolved() const {
    ModelConfig c = *this;
    if (c.num_classes < 2) throw ConfigError("ModelConfig: need at least 2 classes");
    c.backbone.validate();
    c.duc.validate();
    if (c.decoder == Decoder::duc && c.backbone.stride_to(c.backbone.tap_im) != c.duc.guide_stride) {
      throw ConfigError("ModelConfig: backbone stride at tap_im is " +
                        std::to_string(c.backbone.stride_to(c.backbone.tap_im)) +
                        " but duc guide_stride is " + std::to_string(c.duc.guide_stride));
    }
    c.dlc.in_channels = c.decoder == Decoder::duc
                            ? c.duc.out_channels + c.backbone.im_channels()
                            : c.backbone.il_channels();
    c.dlc.validate();
    return c;
  }

  ConvSpec classifier_spec() const { return pointwise(dlc.fuse_channels, num_classes); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <Real T>
struct ModelParams {
  BackboneParams<T> backbone;
  std::optional<DucParams<T>> duc;  // absent for the bilinear decoder
  DlcParams<T> dlc;
  ConvParams<T> classifier;

  template <class F>
  void visit(F&& f, std::string_view prefix = {}) {
    backbone.visit(f, join_name(prefix, "backbone"));
    if (duc) duc->visit(f, join_name(prefix, "duc"));
    dlc.visit(f, join_name(prefix, "dlc"));
    classifier.visit(f, join_name(prefix, "classifier"));
  }
  template <class F>
  void visit_buffers(F&& f, std::string_view prefix = {}) {
    backbone.visit_buffers(f, join_name(prefix, "backbone"));
    if (duc) duc->visit_buffers(f, join_name(prefix, "duc"));
  }
};

inline constexpr double kClassifierInitScale = 0.1;

/// `cfg` must already be resolved.
template <Real T>
ModelParams<T> init_model_params(const ModelConfig& cfg, SplitMix64& rng) {
  ModelParams<T> p;
  p.backbone = init_backbone_params<T>(cfg.backbone, rng);
  if (cfg.decoder == Decoder::duc) {
    p.duc = init_duc_params<T>(cfg.duc, cfg.backbone.in_channels, cfg.backbone.il_channels(), rng);
  }
  p.dlc = init_dlc_params<T>(cfg.dlc, rng);
  p.classifier = init_conv_params<T>(cfg.classifier_spec(), rng);
  // Shrunk so the initial prediction is close to uniform; the DLC output
  // is not normalized and would otherwise give logits of size ~10.
  for (auto& w : p.classifier.weight.data()) w *= T(kClassifierInitScale);
  return p;
}

template <Real T>
struct ModelCache {
  Mode mode = Mode::eval;
  BackboneCache<T> backbone;
  std::optional<DucCache<T>> duc;
  Shape4 il_shape, im_shape;
  DlcCache<T> dlc;
  Tensor4<T> dlc_out;
  Tensor4<T> logits_lo;
  int out_h = 0, out_w = 0;
};

template <Real T>
struct ModelForward {
  Tensor4<T> logits;  // (n, K, H, W) at input resolution
  ModelCache<T> cache;
};

template <Real T>
ModelForward<T> forward_full(const Tensor4<T>& image, const ModelConfig& cfg,
                             ModelParams<T>& params, Mode mode) {
  ModelForward<T> r;
  ModelCache<T>& c = r.cache;
  c.mode = mode;
  auto bb = backbone_forward(image, cfg.backbone, params.backbone, mode);
  c.il_shape = bb.il.shape();
  c.im_shape = bb.im.shape();
  Tensor4<T> decoded;
  if (cfg.decoder == Decoder::duc) {
    if (!params.duc) throw ConfigError("forward_full: duc decoder without duc parameters");
    auto d = duc_forward(image, bb.il, bb.im, cfg.duc, *params.duc, mode);
    decoded = std::move(d.output);
    c.duc = std::move(d.cache);
  } else {
    decoded = bilinear_resize_forward(bb.il, bb.im.h(), bb.im.w());
  }
  c.backbone = std::move(bb.cache);
  auto dl = dlc_forward(decoded, cfg.dlc, params.dlc);
  c.dlc = std::move(dl.cache);
  c.dlc_out = std::move(dl.output);
  c.logits_lo = conv2d_forward(c.dlc_out, cfg.classifier_spec(), params.classifier);
  c.out_h = image.h();
  c.out_w = image.w();
  r.logits = bilinear_resize_forward(c.logits_lo, image.h(), image.w());
  return r;
}

template <Real T>
struct ModelGrads {
  ModelParams<T> params;
  Tensor4<T> grad_image;
};

template <Real T>
ModelGrads<T> backward_full(const ModelCache<T>& c, const ModelConfig& cfg,
                            const ModelParams<T>& params, const Tensor4<T>& grad_logits) {
  ModelGrads<T> g;
  const Tensor4<T> grad_lo =
      bilinear_resize_backward(c.logits_lo.shape(), c.out_h, c.out_w, grad_logits);
  auto gcls = conv2d_backward(c.dlc_out, cfg.classifier_spec(), params.classifier, grad_lo);
  g.params.classifier = std::move(gcls.params);
  auto gdlc = dlc_backward(c.dlc, cfg.dlc, params.dlc, gcls.grad_x);
  g.params.dlc = std::move(gdlc.params);

  Tensor4<T> grad_im(c.im_shape), grad_il;
  Tensor4<T> grad_image_direct;
  if (cfg.decoder == Decoder::duc) {
    auto gd = duc_backward(*c.duc, cfg.duc, *params.duc, gdlc.grad_x);
    g.params.duc = std::move(gd.params);
    grad_im = std::move(gd.grad_intermediate);
    grad_il = std::move(gd.grad_lowres);
    grad_image_direct = std::move(gd.grad_image);
  } else {
    grad_il = bilinear_resize_backward(c.il_shape, c.im_shape.h, c.im_shape.w, gdlc.grad_x);
  }
  auto gb = backbone_backward(c.backbone, cfg.backbone, params.backbone, grad_im, grad_il);
  g.params.backbone = std::move(gb.params);
  g.grad_image = std::move(gb.grad_image);
  if (!grad_image_direct.empty()) accumulate_into(g.grad_image, grad_image_direct);
  return g;
}

}  // namespace ducseg
