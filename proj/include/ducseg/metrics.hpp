#pragma once

// Confusion-matrix segmentation metrics.
//
//   PA   = sum_i p_ii / sum_ij p_ij
//   mPA  = mean_i p_ii / sum_j p_ij
//   mIoU = mean_i p_ii / (sum_j p_ij + sum_j p_ji - p_ii)
//
// where p_ij counts pixels of true class i predicted as j. Class means run
// over the classes present in the ground truth (nonzero row sum); absent
// classes would contribute 0/0 and are left out.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>  // nlohmann, vendored single header

#include "ducseg/errors.hpp"
#include "ducseg/label_map.hpp"

namespace ducseg {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0) : k_(classes) {
    if (classes < 0) throw ConfigError("ConfusionMatrix: negative class count");
    counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
  }

  int classes() const noexcept { return k_; }
  std::uint64_t operator()(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * k_ + pred];
  }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  std::uint64_t total() const noexcept {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }
  std::uint64_t row_sum(int i) const noexcept {
    std::uint64_t t = 0;
    for (int j = 0; j < k_; ++j) t += counts_[static_cast<std::size_t>(i) * k_ + j];
    return t;
  }
  std::uint64_t col_sum(int j) const noexcept {
    std::uint64_t t = 0;
    for (int i = 0; i < k_; ++i) t += counts_[static_cast<std::size_t>(i) * k_ + j];
    return t;
  }

  /// Adds one count per pixel; pixels whose truth is the ignore index are skipped.
  void accumulate(const LabelMap& pred, const LabelMap& truth) {
    if (!pred.same_shape(truth)) throw ShapeError("confusion: prediction and truth shapes differ");
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
      const int t = truth.data[i];
      if (t == truth.ignore_index) continue;
      const int p = pred.data[i];
      if (t < 0 || t >= k_) {
        throw ShapeError("confusion: truth class " + std::to_string(t) + " out of range");
      }
      if (p < 0 || p >= k_) {
        throw ShapeError("confusion: predicted class " + std::to_string(p) + " out of range");
      }
      ++counts_[static_cast<std::size_t>(t) * k_ + p];
    }
  }

  void merge(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw ShapeError("confusion: cannot merge matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  /// Builds a matrix from row-major counts (truth-major).
  static ConfusionMatrix from_counts(int classes, std::vector<std::uint64_t> counts) {
    ConfusionMatrix cm(classes);
    if (counts.size() != cm.counts_.size()) throw ShapeError("confusion: wrong count length");
    cm.counts_ = std::move(counts);
    return cm;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int k_ = 0;
  std::vector<std::uint64_t> counts_;
};

inline double pixel_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw NumericalError("pixel_accuracy: confusion matrix is empty");
  std::uint64_t diag = 0;
  for (int i = 0; i < cm.classes(); ++i) diag += cm(i, i);
  return static_cast<double>(diag) / static_cast<double>(total);
}

/// IoU of class i, or nullopt when the class never occurs in the ground truth.
inline std::optional<double> class_iou(const ConfusionMatrix& cm, int i) {
  const auto row = cm.row_sum(i);
  if (row == 0) return std::nullopt;
  const auto uni = row + cm.col_sum(i) - cm(i, i);
  return static_cast<double>(cm(i, i)) / static_cast<double>(uni);
}

inline std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out;
  for (int i = 0; i < cm.classes(); ++i) out.push_back(class_iou(cm, i));
  return out;
}

inline double mean_pixel_accuracy(const ConfusionMatrix& cm) {
  double s = 0.0;
  int present = 0;
  for (int i = 0; i < cm.classes(); ++i) {
    const auto row = cm.row_sum(i);
    if (row == 0) continue;
    s += static_cast<double>(cm(i, i)) / static_cast<double>(row);
    ++present;
  }
  if (present == 0) throw NumericalError("mean_pixel_accuracy: no class present in ground truth");
  return s / present;
}

inline double mean_iou(const ConfusionMatrix& cm) {
  double s = 0.0;
  int present = 0;
  for (int i = 0; i < cm.classes(); ++i) {
    if (const auto v = class_iou(cm, i)) {
      s += *v;
      ++present;
    }
  }
  if (present == 0) throw NumericalError("mean_iou: no class present in ground truth");
  return s / present;
}

inline double final_score(double miou, double pa) { return 0.5 * (miou + pa); }

/// Two-decimal rounding with ties away from zero for nonnegative values.
/// The 1e-9 nudge absorbs representation error, e.g. 64.635 is stored as
/// 64.63499999999999.
inline double round_half_up_2(double x) {
  return std::floor(x * 100.0 + 0.5 + 1e-9) / 100.0;
}

struct SegMetrics {
  double pixel_accuracy = 0.0;
  double mean_pixel_accuracy = 0.0;
  double mean_iou = 0.0;
  double final_score = 0.0;
  std::vector<std::optional<double>> per_class_iou;
};

inline SegMetrics compute_metrics(const ConfusionMatrix& cm) {
  SegMetrics m;
  m.pixel_accuracy = pixel_accuracy(cm);
  m.mean_pixel_accuracy = mean_pixel_accuracy(cm);
  m.mean_iou = mean_iou(cm);
  m.final_score = final_score(m.mean_iou, m.pixel_accuracy);
  m.per_class_iou = per_class_iou(cm);
  return m;
}

/// {pixel_accuracy, mean_pixel_accuracy, mean_iou, final_score, per_class_iou};
/// classes absent from the ground truth have a null IoU.
inline nlohmann::json to_json(const SegMetrics& m) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : m.per_class_iou) per.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  return {{"pixel_accuracy", m.pixel_accuracy},
          {"mean_pixel_accuracy", m.mean_pixel_accuracy},
          {"mean_iou", m.mean_iou},
          {"final_score", m.final_score},
          {"per_class_iou", per}};
}

}  // namespace ducseg
