#pragma once

// Training loop and single/multi-scale evaluation.
//
// One iteration: augment each sample of the batch, forward in train mode,
// softmax cross-entropy, full backward, SGD step at the poly learning rate.
// The shuffle order and augmentation draws come from streams derived from
// the seed and epoch, so a run is reproducible bit-for-bit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "ducseg/augment.hpp"
#include "ducseg/errors.hpp"
#include "ducseg/metrics.hpp"
#include "ducseg/model.hpp"
#include "ducseg/ops/loss.hpp"
#include "ducseg/ops/resize.hpp"
#include "ducseg/optimizer.hpp"

namespace ducseg {

struct TrainConfig {
  double base_lr = 0.001;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 30;
  int batch_size = 8;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("TrainConfig: base_lr must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("TrainConfig: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
    if (power < 0.0) throw ConfigError("TrainConfig: power must be >= 0");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    augment.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_miou;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["mean_loss"] = r.mean_loss;
  j["val_miou"] = r.val_miou ? nlohmann::json(*r.val_miou) : nlohmann::json(nullptr);
  return j;
}

/// Name of the first tensor of `p` holding a NaN or infinity.
template <Real T, class P>
std::optional<std::string> first_non_finite(P& p) {
  std::optional<std::string> bad;
  p.visit([&](const std::string& name, std::span<T> v) {
    if (bad) return;
    for (T x : v) {
      if (!std::isfinite(x)) {
        bad = name;
        return;
      }
    }
  });
  return bad;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Spatial size used for an input of `extent` pixels at `scale`: rounded to
/// the nearest multiple of `divisor`, at least one multiple.
inline int scaled_extent(int extent, double scale, int divisor) {
  const double want = extent * scale / divisor;
  return divisor * std::max(1, static_cast<int>(std::lround(want)));
}

/// Softmax probabilities averaged over `scales`, at the sample's native resolution.
template <Real T>
Tensor4<double> multiscale_probabilities(const Tensor4<T>& image, const ModelConfig& cfg,
                                         ModelParams<T>& params, std::span<const double> scales) {
  if (scales.empty()) throw ConfigError("evaluate: empty scale list");
  const int H = image.h(), W = image.w(), div = cfg.backbone.required_divisor();
  Tensor4<double> sum;
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("evaluate: scales must be positive");
    const int h = scaled_extent(H, s, div), w = scaled_extent(W, s, div);
    const Tensor4<T> in = (h == H && w == W) ? image : bilinear_resize_forward(image, h, w);
    Tensor4<double> prob = softmax_channels(forward_full(in, cfg, params, Mode::eval).logits);
    if (h != H || w != W) prob = bilinear_resize_forward(prob, H, W);
    if (sum.empty()) {
      sum = std::move(prob);
    } else {
      accumulate_into(sum, prob);
    }
  }
  if (scales.size() > 1) {
    for (auto& v : sum.data()) v /= static_cast<double>(scales.size());
  }
  return sum;
}

/// Argmax prediction for every sample at the given scales.
template <Real T>
LabelMap predict(const Tensor4<T>& image, const ModelConfig& cfg, ModelParams<T>& params,
                 std::span<const double> scales) {
  return argmax_channels(multiscale_probabilities(image, cfg, params, scales));
}

/// Confusion matrix of predictions over `data` (batched by equal image size).
template <Real T>
ConfusionMatrix evaluate_confusion(const std::vector<Sample<T>>& data, const ModelConfig& cfg,
                                   ModelParams<T>& params, std::span<const double> scales,
                                   int batch_size = 16) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  ConfusionMatrix cm(cfg.num_classes);
  std::size_t i = 0;
  while (i < data.size()) {
    std::vector<Tensor4<T>> imgs;
    std::vector<const LabelMap*> labels;
    const Shape4 first = data[i].image.shape();
    while (i < data.size() && static_cast<int>(imgs.size()) < batch_size &&
           data[i].image.shape() == first) {
      data[i].validate();
      imgs.push_back(data[i].image);
      labels.push_back(&data[i].label);
      ++i;
    }
    const LabelMap pred =
        predict(stack_batch(std::span<const Tensor4<T>>(imgs)), cfg, params, scales);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      cm.accumulate(label_item(pred, static_cast<int>(b)), *labels[b]);
    }
  }
  return cm;
}

template <Real T>
SegMetrics evaluate(const std::vector<Sample<T>>& data, const ModelConfig& cfg,
                    ModelParams<T>& params, std::span<const double> scales) {
  return compute_metrics(evaluate_confusion(data, cfg, params, scales));
}

inline const std::vector<double>& default_multiscale() {
  static const std::vector<double> s{0.75, 1.0, 1.25};
  return s;
}

// ---------------------------------------------------------------------------
// Training

/// Called after every epoch with the record and the current parameters.
template <Real T>
using EpochCallback = std::function<void(const EpochRecord&, ModelParams<T>&)>;

/// Iterations per epoch: full batches only, but at least one.
inline int iterations_per_epoch(std::size_t samples, int batch_size) {
  return std::max(1, static_cast<int>(samples / static_cast<std::size_t>(batch_size)));
}

/// Stream tags keep shuffle and augmentation draws independent of each other.
inline constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
inline constexpr std::uint64_t kAugmentStream = 0x4155474dULL;

template <Real T>
std::vector<EpochRecord> train(const ModelConfig& cfg, ModelParams<T>& params,
                               const std::vector<Sample<T>>& train_set,
                               const std::type_identity_t<std::vector<Sample<T>>>* val_set, const TrainConfig& tc,
                               const std::type_identity_t<EpochCallback<T>>& on_epoch = {}) {
  tc.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  const int iters = iterations_per_epoch(train_set.size(), tc.batch_size);
  const int batch = std::min<int>(tc.batch_size, static_cast<int>(train_set.size()));
  const long long max_iter = static_cast<long long>(iters) * tc.epochs;
  auto opt = make_optimizer_state<T>(params);
  std::vector<EpochRecord> log;
  long long iter = 0;

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = SplitMix64::derive(tc.seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    auto aug_rng = SplitMix64::derive(tc.seed ^ kAugmentStream, static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    for (int it = 0; it < iters; ++it, ++iter) {
      std::vector<Tensor4<T>> imgs;
      LabelMap labels(batch, tc.augment.crop, tc.augment.crop);
      const std::size_t plane = static_cast<std::size_t>(tc.augment.crop) * tc.augment.crop;
      for (int b = 0; b < batch; ++b) {
        const auto& src = train_set[order[static_cast<std::size_t>(it * batch + b)]];
        auto s = augment(src, tc.augment, aug_rng);
        imgs.push_back(std::move(s.image));
        std::copy(s.label.data.begin(), s.label.data.end(),
                  labels.data.begin() + static_cast<std::ptrdiff_t>(plane * b));
      }
      const auto x = stack_batch(std::span<const Tensor4<T>>(imgs));
      auto fwd = forward_full(x, cfg, params, Mode::train);
      const auto where = [&] {
        return " at epoch " + std::to_string(epoch) + ", iteration " + std::to_string(it);
      };
      if (!fwd.logits.all_finite()) throw NumericalError("non-finite values in logits" + where());
      auto loss = softmax_cross_entropy(fwd.logits, labels);
      if (!std::isfinite(loss.loss)) throw NumericalError("non-finite loss" + where());
      auto grads = backward_full(fwd.cache, cfg, params, loss.grad);
      if (auto bad = first_non_finite<T>(grads.params)) {
        throw NumericalError("non-finite gradient in " + *bad + where());
      }
      sgd_step(params, grads.params, opt, poly_lr(tc.base_lr, iter, max_iter, tc.power),
               tc.momentum, tc.weight_decay);
      if (auto bad = first_non_finite<T>(params)) {
        throw NumericalError("non-finite parameter " + *bad + " after update" + where());
      }
      loss_sum += loss.loss;
    }

    EpochRecord rec{epoch, loss_sum / iters, std::nullopt};
    if (val_set != nullptr && !val_set->empty()) {
      static constexpr double single[] = {1.0};
      rec.val_miou = evaluate(*val_set, cfg, params, std::span<const double>(single)).mean_iou;
    }
    log.push_back(rec);
    if (on_epoch) on_epoch(rec, params);
  }
  return log;
}

}  // namespace ducseg
