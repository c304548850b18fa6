#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "resseg/tensor.hpp"

namespace resseg {

inline constexpr int kIgnoreId = 255;

/// Integer class-id maps, batch x height x width, row-major.
struct LabelMap {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> ids;

  LabelMap() = default;
  LabelMap(std::size_t b, std::size_t h, std::size_t w, int fill = 0)
      : batch(b), height(h), width(w), ids(b * h * w, fill) {}

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t plane() const noexcept { return height * width; }
  int& at(std::size_t n, std::size_t i, std::size_t j) { return ids[(n * height + i) * width + j]; }
  int at(std::size_t n, std::size_t i, std::size_t j) const {
    return ids[(n * height + i) * width + j];
  }
  bool operator==(const LabelMap&) const = default;
};

enum class LossKind { standard, balanced };

const char* to_string(LossKind kind);

struct LossConfig {
  /// Weight on positive pixels; negatives get 1 - beta.
  double beta = 0.75;
  /// Class ids weighted by beta. Empty means every id except 0.
  std::set<int> positive_classes;
  int ignore_id = kIgnoreId;

  bool is_positive(int class_id) const {
    return positive_classes.empty() ? class_id != 0 : positive_classes.count(class_id) > 0;
  }
  /// Throws ConfigError when beta is outside [0, 1].
  void validate() const;
};

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d value / d prob
};

/// Mean over non-ignored pixels of -log p_t.
LossResult ce_loss(const Tensor& prob, const LabelMap& labels, const LossConfig& cfg);

/// Mean over non-ignored pixels of -w log p_t, w = beta on positive pixels and
/// 1 - beta elsewhere.
LossResult balanced_ce_loss(const Tensor& prob, const LabelMap& labels, const LossConfig& cfg);

LossResult compute_loss(LossKind kind, const Tensor& prob, const LabelMap& labels,
                        const LossConfig& cfg);

/// Adds every non-ignored pixel's weighted -log p_t to `sum` in row-major
/// order and counts it. Batch-size independent building block for evaluation.
void accumulate_loss(LossKind kind, const Tensor& prob, const LabelMap& labels,
                     const LossConfig& cfg, double& sum, std::size_t& count);

}  // namespace resseg
