#include "resseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "resseg/errors.hpp"

namespace resseg {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be a finite non-negative number");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (epoch_limit < 1) throw ConfigError("epoch limit must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  loss_cfg.validate();
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,train_loss,val_loss,val_miou,seconds\n";
  char line[160];
  for (const auto& r : history.epochs) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.6f\n", r.epoch, r.train_loss, r.val_loss,
                  r.val_miou, r.seconds);
    out += line;
  }
  return out;
}

void sgd_momentum_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
                       double lr, double mu) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ShapeError("sgd_momentum_step: parameter, gradient, and velocity sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mu * velocity[i] - lr * grad[i];
    param[i] += velocity[i];
  }
}

void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double mu) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw ShapeError("sgd_momentum_step: shape mismatch");
  }
  sgd_momentum_step(param.data(), grad.data(), velocity.data(), lr, mu);
}

Tensor stack_images(const Dataset& data, std::span<const std::size_t> order) {
  if (order.empty()) throw DegenerateInputError("stack_images: empty batch");
  const Tensor& first = data.samples.at(order[0]).image;
  const std::size_t per = first.size();
  Tensor batch({order.size(), first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t b = 0; b < order.size(); ++b) {
    const Tensor& img = data.samples.at(order[b]).image;
    if (!img.same_shape(first)) throw ShapeError("stack_images: samples differ in size");
    std::copy(img.data().begin(), img.data().end(), batch.raw() + b * per);
  }
  return batch;
}

LabelMap stack_labels(const Dataset& data, std::span<const std::size_t> order) {
  if (order.empty()) throw DegenerateInputError("stack_labels: empty batch");
  const LabelMap& first = data.samples.at(order[0]).labels;
  LabelMap batch(order.size(), first.height, first.width);
  for (std::size_t b = 0; b < order.size(); ++b) {
    const LabelMap& l = data.samples.at(order[b]).labels;
    if (l.height != first.height || l.width != first.width) {
      throw ShapeError("stack_labels: samples differ in size");
    }
    std::copy(l.ids.begin(), l.ids.end(), batch.ids.begin() + static_cast<std::ptrdiff_t>(b * first.plane()));
  }
  return batch;
}

MetricsReport evaluate(Network& net, const Dataset& data, const EvalOptions& opts) {
  if (data.empty()) throw DegenerateInputError("evaluate: empty dataset");
  if (opts.batch_size < 1) throw ConfigError("evaluate: batch size must be at least 1");
  const bool was_training = net.training();
  net.set_training(false);
  ConfusionMatrix conf(net.config().class_count);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  try {
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(opts.batch_size, order.size() - start));
      const LabelMap gt = stack_labels(data, idx);
      const Tensor prob = net.forward(stack_images(data, idx));
      accumulate_loss(opts.loss, prob, gt, opts.loss_cfg, loss_sum, loss_count);
      conf.accumulate(argmax_labels(prob), gt, opts.loss_cfg.ignore_id);
    }
  } catch (...) {
    net.set_training(was_training);
    throw;
  }
  net.set_training(was_training);
  if (loss_count == 0) throw DegenerateInputError("evaluate: every pixel is ignored");
  return make_report(conf, loss_sum / static_cast<double>(loss_count));
}

TrainHistory train(Network& net, const Dataset& train_set, const Dataset& validation, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DegenerateInputError("train: empty training set");

  std::vector<Tensor> velocity;
  std::vector<Tensor*> trainable;
  for (auto& p : net.parameters()) {
    if (!p.trainable) continue;
    trainable.push_back(p.tensor);
    velocity.emplace_back(p.tensor->shape(), 0.0);
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const EvalOptions eval_opts{cfg.batch_size, cfg.loss, cfg.loss_cfg};

  TrainHistory history;
  for (std::size_t epoch = 1; epoch <= cfg.epoch_limit; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    if (cfg.shuffle) shuffle(order, rng);
    net.set_training(true);
    double loss_sum = 0.0;
    std::size_t loss_pixels = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      const LabelMap labels = stack_labels(train_set, idx);
      const Tensor prob = net.forward(stack_images(train_set, idx));
      const LossResult loss = compute_loss(cfg.loss, prob, labels, cfg.loss_cfg);
      std::size_t counted = 0;
      for (int id : labels.ids) counted += id != cfg.loss_cfg.ignore_id ? 1 : 0;
      loss_sum += loss.value * static_cast<double>(counted);
      loss_pixels += counted;

      net.backward(loss.grad);
      for (std::size_t k = 0; k < trainable.size(); ++k) {
        sgd_momentum_step(trainable[k]->data(), trainable[k]->grad(), velocity[k].data(), cfg.learning_rate,
                          cfg.momentum);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(loss_pixels);
    if (validation.empty()) {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
      rec.val_miou = std::numeric_limits<double>::quiet_NaN();
    } else {
      const MetricsReport report = evaluate(net, validation, eval_opts);
      rec.val_loss = report.mean_loss;
      rec.val_miou = report.mean_iou;
    }
    if (cfg.measure_time) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    history.epochs.push_back(rec);
    if (on_epoch) {
      const bool due = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
      on_epoch(rec, net, due);
    }
  }
  net.set_training(true);
  return history;
}

}  // namespace resseg
