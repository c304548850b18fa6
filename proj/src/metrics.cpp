#include "resseg/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "resseg/errors.hpp"

namespace resseg {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt, int ignore_id) {
  if (pred.batch != gt.batch || pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("confusion: prediction and ground truth shapes differ");
  }
  const auto classes = static_cast<int>(classes_);
  // Validate first so a bad id leaves the matrix untouched.
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.ids[i] == ignore_id) continue;
    if (gt.ids[i] < 0 || gt.ids[i] >= classes || pred.ids[i] < 0 || pred.ids[i] >= classes) {
      throw LabelError("confusion: class id outside [0, " + std::to_string(classes_) + ")");
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.ids[i] == ignore_id) continue;
    ++counts_[static_cast<std::size_t>(gt.ids[i]) * classes_ + static_cast<std::size_t>(pred.ids[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion: cannot merge matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::optional<double> ConfusionMatrix::iou(std::size_t class_id) const {
  if (class_id >= classes_) throw LabelError("confusion: class id out of range");
  std::uint64_t row = 0;
  std::uint64_t col = 0;
  for (std::size_t k = 0; k < classes_; ++k) {
    row += count(class_id, k);
    col += count(k, class_id);
  }
  const std::uint64_t tp = count(class_id, class_id);
  const std::uint64_t uni = row + col - tp;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

std::optional<double> iou(const LabelMap& pred, const LabelMap& gt, int class_id, int ignore_id) {
  if (pred.batch != gt.batch || pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("iou: prediction and ground truth shapes differ");
  }
  std::uint64_t inter = 0;
  std::uint64_t uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.ids[i] == ignore_id) continue;
    const bool in_pred = pred.ids[i] == class_id;
    const bool in_gt = gt.ids[i] == class_id;
    inter += (in_pred && in_gt) ? 1 : 0;
    uni += (in_pred || in_gt) ? 1 : 0;
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const ConfusionMatrix& conf) {
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < conf.classes(); ++c) {
    if (auto v = conf.iou(c)) {
      sum += *v;
      ++defined;
    }
  }
  if (defined == 0) throw DegenerateInputError("miou: no class has a defined IoU");
  return sum / static_cast<double>(defined);
}

LabelMap argmax_labels(const Tensor& prob) {
  if (prob.rank() != 4) throw ShapeError("argmax_labels: expected B x C x H x W");
  const std::size_t classes = prob.dim(1);
  LabelMap out(prob.dim(0), prob.dim(2), prob.dim(3));
  const std::size_t plane = out.plane();
  for (std::size_t n = 0; n < out.batch; ++n) {
    const double* base = prob.raw() + n * classes * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (base[c * plane + p] > base[best * plane + p]) best = c;
      }
      out.ids[n * plane + p] = static_cast<int>(best);
    }
  }
  return out;
}

MetricsReport make_report(const ConfusionMatrix& conf, double mean_loss) {
  MetricsReport r{conf, {}, 0.0, mean_loss};
  for (std::size_t c = 0; c < conf.classes(); ++c) {
    if (auto v = conf.iou(c)) r.per_class.push_back({c, *v});
  }
  r.mean_iou = miou(conf);
  return r;
}

std::string render_iou_table(const MetricsReport& report, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %s\n", "Category", "IoU");
  os << line;
  for (const auto& row : report.per_class) {
    const std::string name = row.class_id < class_names.size() ? class_names[row.class_id]
                                                               : "class_" + std::to_string(row.class_id);
    std::snprintf(line, sizeof line, "%-16s %.12f\n", name.c_str(), row.iou);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-16s %.12f\n", "Mean", report.mean_iou);
  os << line;
  return os.str();
}

}  // namespace resseg
