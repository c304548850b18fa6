#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resseg/data_io.hpp"
#include "resseg/loss.hpp"
#include "resseg/metrics.hpp"
#include "resseg/model.hpp"

namespace resseg {

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t epoch_limit = 210;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::standard;
  LossConfig loss_cfg;
  bool shuffle = true;
  /// Checkpoint every k epochs through the callback; 0 disables.
  std::size_t checkpoint_every = 0;
  /// Record wall time per epoch; off keeps histories bitwise reproducible.
  bool measure_time = false;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
  double val_miou = 0.0;  // NaN without a validation set
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Header epoch,train_loss,val_loss,val_miou,seconds; values use %.17g so a
/// history round-trips exactly.
std::string history_csv(const TrainHistory& history);

/// velocity <- mu * velocity - lr * grad; param <- param + velocity.
void sgd_momentum_step(std::span<double> param, std::span<const double> grad,
                       std::span<double> velocity, double lr, double mu);
void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double mu);

/// Stacks samples [first, last) of a dataset into a batch.
Tensor stack_images(const Dataset& data, std::span<const std::size_t> order);
LabelMap stack_labels(const Dataset& data, std::span<const std::size_t> order);

struct EvalOptions {
  std::size_t batch_size = 4;
  LossKind loss = LossKind::standard;
  LossConfig loss_cfg;
};

/// Inference-mode pass over every sample: confusion matrix, per-class IoU,
/// mIoU, and mean loss. Results do not depend on batch_size.
MetricsReport evaluate(Network& net, const Dataset& data, const EvalOptions& opts = {});

/// Called after each epoch; `checkpoint_due` follows checkpoint_every.
using EpochCallback = std::function<void(const EpochRecord&, Network&, bool checkpoint_due)>;

/// Mini-batch SGD with momentum for cfg.epoch_limit epochs. Velocities start
/// at zero; batches follow a seeded shuffle. Validation uses inference mode.
TrainHistory train(Network& net, const Dataset& train_set, const Dataset& validation,
                   const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace resseg
