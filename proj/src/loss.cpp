#include "resseg/loss.hpp"

#include <cmath>
#include <limits>

#include "resseg/errors.hpp"

namespace resseg {

const char* to_string(LossKind kind) {
  return kind == LossKind::standard ? "ce" : "bce";
}

void LossConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ConfigError("beta must lie in [0, 1], got " + std::to_string(beta));
  }
  if (ignore_id >= 0 && positive_classes.count(ignore_id)) {
    throw ConfigError("the ignore id cannot be a positive class");
  }
}

namespace {

void check_inputs(const Tensor& prob, const LabelMap& labels, const LossConfig& cfg) {
  if (prob.rank() != 4 || prob.dim(0) != labels.batch || prob.dim(2) != labels.height ||
      prob.dim(3) != labels.width) {
    throw ShapeError("loss: probability map " + shape_to_string(prob.shape()) +
                     " does not match labels " + std::to_string(labels.batch) + "x" +
                     std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  const auto classes = static_cast<int>(prob.dim(1));
  for (int id : labels.ids) {
    if (id == cfg.ignore_id) continue;
    if (id < 0 || id >= classes) {
      throw LabelError("label " + std::to_string(id) + " outside [0, " + std::to_string(classes) +
                       ") and not the ignore id");
    }
  }
}

double pixel_weight(LossKind kind, int id, const LossConfig& cfg) {
  if (kind == LossKind::standard) return 1.0;
  return cfg.is_positive(id) ? cfg.beta : 1.0 - cfg.beta;
}

// p_t is floored at the smallest normal double so the log stays finite.
double safe_prob(double p) {
  return std::max(p, std::numeric_limits<double>::min());
}

template <typename Visit>
void for_each_counted(const Tensor& prob, const LabelMap& labels, const LossConfig& cfg,
                      Visit&& visit) {
  const std::size_t classes = prob.dim(1);
  const std::size_t plane = labels.plane();
  for (std::size_t n = 0; n < labels.batch; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const int id = labels.ids[n * plane + p];
      if (id == cfg.ignore_id) continue;
      visit(id, (n * classes + static_cast<std::size_t>(id)) * plane + p);
    }
  }
}

}  // namespace

void accumulate_loss(LossKind kind, const Tensor& prob, const LabelMap& labels,
                     const LossConfig& cfg, double& sum, std::size_t& count) {
  check_inputs(prob, labels, cfg);
  for_each_counted(prob, labels, cfg, [&](int id, std::size_t at) {
    sum += -pixel_weight(kind, id, cfg) * std::log(safe_prob(prob[at]));
    ++count;
  });
}

LossResult compute_loss(LossKind kind, const Tensor& prob, const LabelMap& labels,
                        const LossConfig& cfg) {
  if (kind == LossKind::balanced) cfg.validate();
  double sum = 0.0;
  std::size_t count = 0;
  accumulate_loss(kind, prob, labels, cfg, sum, count);
  if (count == 0) throw DegenerateInputError("loss: every pixel is ignored");

  const auto total = static_cast<double>(count);
  LossResult r{sum / total, Tensor(prob.shape(), 0.0)};
  for_each_counted(prob, labels, cfg, [&](int id, std::size_t at) {
    r.grad[at] = -pixel_weight(kind, id, cfg) / (total * safe_prob(prob[at]));
  });
  return r;
}

LossResult ce_loss(const Tensor& prob, const LabelMap& labels, const LossConfig& cfg) {
  return compute_loss(LossKind::standard, prob, labels, cfg);
}

LossResult balanced_ce_loss(const Tensor& prob, const LabelMap& labels, const LossConfig& cfg) {
  return compute_loss(LossKind::balanced, prob, labels, cfg);
}

}  // namespace resseg
