#pragma once

// Per-pixel softmax cross-entropy over the channel axis, mean-reduced over
// the labelled (non-ignored) pixels:
//
//   L = -(1/M) * sum_{labelled p} log softmax(z_p)[t_p]
//   dL/dz_p = (softmax(z_p) - onehot(t_p)) / M,  zero at ignored pixels.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/label_map.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

template <Real T>
struct LossValue {
  double loss = 0.0;
  Tensor4<T> grad;
};

namespace detail {

template <Real T>
void check_logits_labels(const Tensor4<T>& logits, const LabelMap& labels) {
  if (labels.n != logits.n() || labels.h != logits.h() || labels.w != logits.w()) {
    throw ShapeError("label map (" + std::to_string(labels.n) + "," + std::to_string(labels.h) +
                     "," + std::to_string(labels.w) + ") does not match logits " +
                     to_string(logits.shape()));
  }
}

}  // namespace detail

template <Real T>
LossValue<T> softmax_cross_entropy(const Tensor4<T>& logits, const LabelMap& labels) {
  detail::check_logits_labels(logits, labels);
  const int K = logits.c();
  labels.validate(K);
  const std::size_t plane = logits.shape().plane();

  std::size_t labelled = 0;
  for (auto v : labels.data) labelled += (v != labels.ignore_index) ? 1 : 0;
  if (labelled == 0) throw NumericalError("softmax_cross_entropy: every pixel is ignored");
  const double inv_m = 1.0 / static_cast<double>(labelled);

  LossValue<T> out{0.0, Tensor4<T>(logits.shape())};
  std::vector<double> prob(static_cast<std::size_t>(K));
  double total = 0.0;
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const int t = labels.data[static_cast<std::size_t>(n) * plane + i];
      if (t == labels.ignore_index) continue;
      double zmax = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) zmax = std::max(zmax, static_cast<double>(logits.plane(n, k)[i]));
      double denom = 0.0;
      for (int k = 0; k < K; ++k) {
        prob[k] = std::exp(static_cast<double>(logits.plane(n, k)[i]) - zmax);
        denom += prob[k];
      }
      total += std::log(denom) - (static_cast<double>(logits.plane(n, t)[i]) - zmax);
      for (int k = 0; k < K; ++k) {
        const double pk = prob[k] / denom;
        out.grad.plane(n, k)[i] = static_cast<T>((pk - (k == t ? 1.0 : 0.0)) * inv_m);
      }
    }
  }
  out.loss = total * inv_m;
  return out;
}

/// Channelwise softmax in double precision.
template <Real T>
Tensor4<double> softmax_channels(const Tensor4<T>& logits) {
  Tensor4<double> p(logits.shape());
  const std::size_t plane = logits.shape().plane();
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double zmax = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < logits.c(); ++k) {
        zmax = std::max(zmax, static_cast<double>(logits.plane(n, k)[i]));
      }
      double denom = 0.0;
      for (int k = 0; k < logits.c(); ++k) {
        const double e = std::exp(static_cast<double>(logits.plane(n, k)[i]) - zmax);
        p.plane(n, k)[i] = e;
        denom += e;
      }
      for (int k = 0; k < logits.c(); ++k) p.plane(n, k)[i] /= denom;
    }
  }
  return p;
}

/// Per-pixel index of the largest channel (first wins on ties).
template <Real T>
LabelMap argmax_channels(const Tensor4<T>& scores, int ignore_index = kDefaultIgnoreIndex) {
  LabelMap out(scores.n(), scores.h(), scores.w(), 0, ignore_index);
  const std::size_t plane = scores.shape().plane();
  for (int n = 0; n < scores.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      int best = 0;
      T best_v = scores.plane(n, 0)[i];
      for (int k = 1; k < scores.c(); ++k) {
        const T v = scores.plane(n, k)[i];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.data[static_cast<std::size_t>(n) * plane + i] = best;
    }
  }
  return out;
}

}  // namespace ducseg
