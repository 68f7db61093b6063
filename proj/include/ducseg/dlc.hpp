#pragma once

// Dense local context (DLC): a cascade of dilated 3x3 convolutions whose
// inputs accumulate densely.
//
//   y0      = reduce(x)                                     1x1
//   in_i    = [y0, out_0, ..., out_{i-1}]
//   out_i   = dil_i(ReLU(pre_i(in_i)))                      1x1 then 3x3, dilation rates[i]
//   output  = fuse([y0, out_0, ..., out_{n-1}])             1x1
//
// Every dilated conv pads by its rate, so spatial size is preserved and the
// cascade can concatenate freely. The 1x1 pre-convolutions shrink each
// branch input to pre_channels before the expensive 3x3, which is where the
// parameter savings over a DenseASPP-style stack come from.

#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/ops/activation.hpp"
#include "ducseg/ops/conv.hpp"
#include "ducseg/params.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

// ---------------------------------------------------------------------------
// Receptive-field calculus

/// Extent of one k x k kernel with dilation d: (d - 1)(k - 1) + k.
constexpr int receptive_field(int kernel, int dilation) {
  if (kernel < 1 || dilation < 1) throw ConfigError("receptive_field: k and d must be >= 1");
  return (dilation - 1) * (kernel - 1) + kernel;
}

struct RfLayer {
  int kernel = 3;
  int dilation = 1;
};

/// Serial composition: RF = RF_1 + RF_2 - 1, folded left over the layers.
inline int stack_receptive_field(std::span<const RfLayer> layers) {
  if (layers.empty()) throw ConfigError("stack_receptive_field: empty layer list");
  int rf = receptive_field(layers.front().kernel, layers.front().dilation);
  for (const auto& l : layers.subspan(1)) rf = rf + receptive_field(l.kernel, l.dilation) - 1;
  return rf;
}

// ---------------------------------------------------------------------------
// Configuration and parameter budget

struct DlcConfig {
  int in_channels = 64;
  int reduce_channels = 32;
  int pre_channels = 16;  // output width of each 1x1 pre-convolution
  int branch_channels = 16;
  int fuse_channels = 32;
  std::vector<int> rates{3, 6, 12, 18};

  int branch_count() const noexcept { return static_cast<int>(rates.size()); }

  /// Input width of branch i under dense accumulation.
  int branch_input_channels(int i) const noexcept { return reduce_channels + i * branch_channels; }

  int fused_input_channels() const noexcept { return branch_input_channels(branch_count()); }

  void validate() const {
    if (in_channels < 1 || reduce_channels < 1 || pre_channels < 1 || branch_channels < 1 ||
        fuse_channels < 1) {
      throw ConfigError("DlcConfig: channel counts must be >= 1");
    }
    if (rates.empty()) throw ConfigError("DlcConfig: at least one dilation rate is required");
    for (std::size_t i = 0; i < rates.size(); ++i) {
      if (rates[i] < 1) throw ConfigError("DlcConfig: dilation rates must be >= 1");
      if (i > 0 && rates[i] <= rates[i - 1]) {
        throw ConfigError("DlcConfig: dilation rates must be strictly increasing");
      }
    }
  }

  ConvSpec reduce_spec() const { return pointwise(in_channels, reduce_channels); }
  ConvSpec pre_spec(int i) const { return pointwise(branch_input_channels(i), pre_channels); }
  ConvSpec dil_spec(int i) const {
    return conv3x3(pre_channels, branch_channels, 1, rates[static_cast<std::size_t>(i)]);
  }
  ConvSpec fuse_spec() const { return pointwise(fused_input_channels(), fuse_channels); }

  friend bool operator==(const DlcConfig&, const DlcConfig&) = default;
};

/// Widths for the 1.5M-parameter budget check: the
/// module sees a 512-channel input, reduces to 256, squeezes each branch
/// input to 64 before a 256-wide dilated conv, and fuses back to 512.
inline DlcConfig reference_scale_dlc_config() {
  return DlcConfig{512, 256, 64, 256, 512, {3, 6, 12, 18}};
}

namespace detail {
constexpr std::int64_t conv_param_count(std::int64_t in, std::int64_t out, std::int64_t k) {
  return in * out * k * k + out;
}
}  // namespace detail

/// Exact number of weights and biases in DlcParams for `cfg`.
inline std::int64_t param_count(const DlcConfig& cfg) {
  cfg.validate();
  std::int64_t total = detail::conv_param_count(cfg.in_channels, cfg.reduce_channels, 1);
  for (int i = 0; i < cfg.branch_count(); ++i) {
    total += detail::conv_param_count(cfg.branch_input_channels(i), cfg.pre_channels, 1);
    total += detail::conv_param_count(cfg.pre_channels, cfg.branch_channels, 3);
  }
  total += detail::conv_param_count(cfg.fused_input_channels(), cfg.fuse_channels, 1);
  return total;
}

/// Same cascade without the 1x1 pre-convolutions: every dilated 3x3 reads
/// its full dense input, as in DenseASPP. Counting only; never executed.
inline std::int64_t dense_aspp_param_count(const DlcConfig& cfg) {
  cfg.validate();
  std::int64_t total = detail::conv_param_count(cfg.in_channels, cfg.reduce_channels, 1);
  for (int i = 0; i < cfg.branch_count(); ++i) {
    total += detail::conv_param_count(cfg.branch_input_channels(i), cfg.branch_channels, 3);
  }
  total += detail::conv_param_count(cfg.fused_input_channels(), cfg.fuse_channels, 1);
  return total;
}

/// Receptive field of the dilated chain (3x3 kernels at the configured rates).
inline int dlc_receptive_field(const DlcConfig& cfg) {
  std::vector<RfLayer> layers;
  for (int r : cfg.rates) layers.push_back({3, r});
  return stack_receptive_field(layers);
}

/// A warning when the stacked receptive field exceeds the smallest feature
/// map the module will see; such rates mostly sample padding.
inline std::optional<std::string> receptive_field_warning(const DlcConfig& cfg,
                                                          int min_feature_extent) {
  const int rf = dlc_receptive_field(cfg);
  if (rf <= min_feature_extent) return std::nullopt;
  return "DLC receptive field " + std::to_string(rf) + " exceeds the feature map extent " +
         std::to_string(min_feature_extent) + "; the largest rates mostly read zero padding";
}

// ---------------------------------------------------------------------------
// Parameters

template <Real T>
struct DlcParams {
  ConvParams<T> reduce;
  std::vector<ConvParams<T>> pre;
  std::vector<ConvParams<T>> dil;
  ConvParams<T> fuse;

  template <class F>
  void visit(F&& f, std::string_view prefix = {}) {
    reduce.visit(f, join_name(prefix, "reduce"));
    for (std::size_t i = 0; i < pre.size(); ++i) {
      pre[i].visit(f, join_name(prefix, "pre" + std::to_string(i)));
      dil[i].visit(f, join_name(prefix, "dil" + std::to_string(i)));
    }
    fuse.visit(f, join_name(prefix, "fuse"));
  }
  template <class F>
  void visit_buffers(F&&, std::string_view = {}) {}
};

/// Throws unless every tensor matches the cascade layout for `cfg`.
template <Real T>
void check_dlc_params(const DlcConfig& cfg, const DlcParams<T>& p) {
  cfg.validate();
  auto matches = [](const ConvParams<T>& c, const ConvSpec& s) {
    return c.weight.shape() == Shape4{s.out_channels, s.in_channels, s.kernel, s.kernel} &&
           c.bias.size() == static_cast<std::size_t>(s.out_channels);
  };
  if (!matches(p.reduce, cfg.reduce_spec())) throw ShapeError("dlc: reduce conv shape mismatch");
  if (p.pre.size() != cfg.rates.size() || p.dil.size() != cfg.rates.size()) {
    throw ShapeError("dlc: expected " + std::to_string(cfg.rates.size()) + " branches");
  }
  for (int i = 0; i < cfg.branch_count(); ++i) {
    const auto& pre = p.pre[static_cast<std::size_t>(i)];
    if (!matches(pre, cfg.pre_spec(i))) {
      throw ShapeError("dlc branch " + std::to_string(i) + ": pre conv reads " +
                       std::to_string(pre.weight.c()) + " channels, dense accumulation gives " +
                       std::to_string(cfg.branch_input_channels(i)));
    }
    if (!matches(p.dil[static_cast<std::size_t>(i)], cfg.dil_spec(i))) {
      throw ShapeError("dlc branch " + std::to_string(i) + ": dilated conv shape mismatch");
    }
  }
  if (!matches(p.fuse, cfg.fuse_spec())) throw ShapeError("dlc: fuse conv shape mismatch");
}

template <Real T>
DlcParams<T> init_dlc_params(const DlcConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  DlcParams<T> p;
  p.reduce = init_conv_params<T>(cfg.reduce_spec(), rng);
  for (int i = 0; i < cfg.branch_count(); ++i) {
    p.pre.push_back(init_conv_params<T>(cfg.pre_spec(i), rng));
    p.dil.push_back(init_conv_params<T>(cfg.dil_spec(i), rng));
  }
  p.fuse = init_conv_params<T>(cfg.fuse_spec(), rng);
  check_dlc_params(cfg, p);
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <Real T>
struct DlcCache {
  Tensor4<T> x;
  Tensor4<T> reduced;                  // y0
  std::vector<Tensor4<T>> inputs;      // in_i
  std::vector<Tensor4<T>> pre_out;     // ReLU inputs
  std::vector<Tensor4<T>> relu_out;    // dilated-conv inputs
  Tensor4<T> fused_in;                 // [y0, out_0, ..., out_{n-1}]
};

template <Real T>
struct DlcResult {
  Tensor4<T> output;
  DlcCache<T> cache;
};

template <Real T>
struct DlcGrads {
  DlcParams<T> params;
  Tensor4<T> grad_x;
};

template <Real T>
DlcResult<T> dlc_forward(const Tensor4<T>& x, const DlcConfig& cfg, const DlcParams<T>& params) {
  check_dlc_params(cfg, params);
  if (x.c() != cfg.in_channels) {
    throw ShapeError("dlc: input has " + std::to_string(x.c()) + " channels, expected " +
                     std::to_string(cfg.in_channels));
  }
  DlcResult<T> r;
  DlcCache<T>& c = r.cache;
  c.x = x;
  c.reduced = conv2d_forward(x, cfg.reduce_spec(), params.reduce);
  Tensor4<T> dense = c.reduced;
  for (int i = 0; i < cfg.branch_count(); ++i) {
    const auto bi = static_cast<std::size_t>(i);
    c.inputs.push_back(dense);
    c.pre_out.push_back(conv2d_forward(dense, cfg.pre_spec(i), params.pre[bi]));
    c.relu_out.push_back(relu_forward(c.pre_out.back()));
    Tensor4<T> out = conv2d_forward(c.relu_out.back(), cfg.dil_spec(i), params.dil[bi]);
    dense = concat_channels(dense, out);
  }
  c.fused_in = std::move(dense);
  r.output = conv2d_forward(c.fused_in, cfg.fuse_spec(), params.fuse);
  return r;
}

template <Real T>
DlcGrads<T> dlc_backward(const DlcCache<T>& c, const DlcConfig& cfg, const DlcParams<T>& params,
                         const Tensor4<T>& grad_out) {
  const int R = cfg.reduce_channels, B = cfg.branch_channels, n = cfg.branch_count();
  auto gfuse = conv2d_backward(c.fused_in, cfg.fuse_spec(), params.fuse, grad_out);

  Tensor4<T> grad_reduced = slice_channels(gfuse.grad_x, 0, R);
  std::vector<Tensor4<T>> grad_branch;
  for (int j = 0; j < n; ++j) grad_branch.push_back(slice_channels(gfuse.grad_x, R + j * B, B));

  DlcGrads<T> g;
  g.params.pre.resize(static_cast<std::size_t>(n));
  g.params.dil.resize(static_cast<std::size_t>(n));
  for (int i = n - 1; i >= 0; --i) {
    const auto bi = static_cast<std::size_t>(i);
    auto gdil = conv2d_backward(c.relu_out[bi], cfg.dil_spec(i), params.dil[bi], grad_branch[bi]);
    const Tensor4<T> grad_pre = relu_backward(c.pre_out[bi], gdil.grad_x);
    auto gpre = conv2d_backward(c.inputs[bi], cfg.pre_spec(i), params.pre[bi], grad_pre);
    accumulate_into(grad_reduced, slice_channels(gpre.grad_x, 0, R));
    for (int j = 0; j < i; ++j) {
      accumulate_into(grad_branch[static_cast<std::size_t>(j)],
                      slice_channels(gpre.grad_x, R + j * B, B));
    }
    g.params.dil[bi] = std::move(gdil.params);
    g.params.pre[bi] = std::move(gpre.params);
  }
  auto gred = conv2d_backward(c.x, cfg.reduce_spec(), params.reduce, grad_reduced);
  g.params.reduce = std::move(gred.params);
  g.params.fuse = std::move(gfuse.params);
  g.grad_x = std::move(gred.grad_x);
  return g;
}

}  // namespace ducseg
