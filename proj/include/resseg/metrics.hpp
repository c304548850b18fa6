#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "resseg/loss.hpp"

namespace resseg {

/// counts(g, p) = pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t count(std::size_t gt, std::size_t pred) const { return counts_.at(gt * classes_ + pred); }
  std::uint64_t total() const noexcept;

  /// Adds one count per pixel whose ground truth is not ignore_id. Throws
  /// LabelError on ids outside [0, classes).
  void accumulate(const LabelMap& pred, const LabelMap& gt, int ignore_id = kIgnoreId);
  /// Elementwise sum with another matrix of the same size.
  void merge(const ConfusionMatrix& other);

  /// tp / (row + col - tp); nullopt when the class never occurs in either.
  std::optional<double> iou(std::size_t class_id) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix accumulate_confusion(ConfusionMatrix conf, const LabelMap& pred,
                                            const LabelMap& gt, int ignore_id = kIgnoreId) {
  conf.accumulate(pred, gt, ignore_id);
  return conf;
}

/// Pixel-set IoU of one class over pixels whose ground truth is not ignored.
/// nullopt when the union is empty.
std::optional<double> iou(const LabelMap& pred, const LabelMap& gt, int class_id,
                          int ignore_id = kIgnoreId);

/// Mean of the defined per-class IoUs. Throws DegenerateInputError when none
/// is defined.
double miou(const ConfusionMatrix& conf);

/// Per-pixel argmax over channels of a B x C x H x W map; ties go to the
/// lowest class id.
LabelMap argmax_labels(const Tensor& prob);

struct ClassIou {
  std::size_t class_id;
  double iou;
};

struct MetricsReport {
  ConfusionMatrix confusion{2};
  std::vector<ClassIou> per_class;  // defined classes only, ascending id
  double mean_iou = 0.0;
  double mean_loss = 0.0;
};

MetricsReport make_report(const ConfusionMatrix& conf, double mean_loss);

/// Two-column table: one row per class with a defined IoU, then a Mean row.
/// Values are fractions printed with twelve decimals.
std::string render_iou_table(const MetricsReport& report,
                             const std::vector<std::string>& class_names = {});

}  // namespace resseg
