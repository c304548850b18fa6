#include <doctest.h>

#include <cmath>

#include "resseg/errors.hpp"
#include "resseg/metrics.hpp"
#include "resseg/synth.hpp"
#include "resseg/trainer.hpp"

using namespace resseg;

namespace {

Dataset tiny_dataset(std::size_t count, std::size_t size, std::size_t classes, std::uint64_t seed) {
  SynthConfig s;
  s.count = count;
  s.size = size;
  s.class_count = classes;
  s.foreground_rate = 0.25;
  s.seed = seed;
  return generate_synthetic(s);
}

std::vector<std::vector<double>> snapshot(const Network& net, bool trainable_only) {
  std::vector<std::vector<double>> out;
  for (const auto& p : net.parameters()) {
    if (trainable_only && !p.trainable) continue;
    out.emplace_back(p.tensor->data().begin(), p.tensor->data().end());
  }
  return out;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.epoch_limit = epochs;
  c.batch_size = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("defaults follow the documented training table") {
  const TrainConfig c;
  CHECK(c.learning_rate == 0.1);
  CHECK(c.momentum == 0.9);
  CHECK(c.epoch_limit == 210);
  CHECK(c.batch_size == 4);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epoch_limit = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.loss_cfg.beta = -0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("sgd momentum worked examples") {
  SUBCASE("mu 0 is plain descent") {
    std::vector<double> p{1.0, -2.0}, g{0.5, 0.25}, v{0.0, 0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.0);
    CHECK(p[0] == 1.0 - 0.1 * 0.5);
    CHECK(p[1] == -2.0 - 0.1 * 0.25);
  }
  SUBCASE("zero gradient from zero velocity leaves params") {
    std::vector<double> p{3.0}, g{0.0}, v{0.0};
    for (int k = 0; k < 5; ++k) sgd_momentum_step(p, g, v, 0.1, 0.9);
    CHECK(p[0] == 3.0);
  }
  SUBCASE("two constant-gradient steps move by -0.29 g") {
    std::vector<double> p{0.0}, g{2.0}, v{0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.9);
    CHECK(p[0] == doctest::Approx(-0.1 * 2.0).epsilon(1e-15));
    sgd_momentum_step(p, g, v, 0.1, 0.9);
    CHECK(std::abs(p[0] - (-0.29 * 2.0)) < 1e-15);
  }
  SUBCASE("three steps unrolled") {
    Tensor p({1}, 1.0), g({1}, 1.0), v({1}, 0.0);
    for (int k = 0; k < 3; ++k) sgd_momentum_step(p, g, v, 0.1, 0.9);
    // v: -0.1, -0.19, -0.271
    CHECK(std::abs(p[0] - (1.0 - 0.1 - 0.19 - 0.271)) < 1e-15);
    CHECK(std::abs(v[0] + 0.271) < 1e-15);
  }
  SUBCASE("shape mismatch") {
    Tensor p({2}, 0.0), g({3}, 0.0), v({2}, 0.0);
    CHECK_THROWS_AS(sgd_momentum_step(p, g, v, 0.1, 0.9), ShapeError);
  }
}

TEST_CASE("empty training set is degenerate") {
  Rng rng(1);
  Network net = build_improved(ArchConfig::desk(2), rng);
  Dataset empty;
  CHECK_THROWS_AS(train(net, empty, empty, quick_config(1)), DegenerateInputError);
  CHECK_THROWS_AS(evaluate(net, empty), DegenerateInputError);
}

TEST_CASE("lr 0 leaves trainable parameters bitwise unchanged") {
  const Dataset data = tiny_dataset(3, 8, 2, 1);
  Rng rng(2);
  Network net = build_improved(ArchConfig::desk(2), rng);
  const auto before = snapshot(net, true);
  TrainConfig c = quick_config(3);
  c.learning_rate = 0.0;
  train(net, data, data, c);
  CHECK(snapshot(net, true) == before);
}

TEST_CASE("same seed gives a bitwise-identical history and parameters") {
  const Dataset data = tiny_dataset(5, 16, 3, 2);
  const Dataset val = tiny_dataset(2, 16, 3, 3);
  auto run = [&]() {
    Rng rng(3);
    Network net = build_improved(ArchConfig::desk(3), rng);
    const TrainHistory h = train(net, data, val, quick_config(3));
    return std::pair{history_csv(h), snapshot(net, false)};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("balanced beta 0.5 follows the standard trajectory at half the learning rate") {
  const Dataset data = tiny_dataset(4, 16, 2, 4);
  auto run = [&](LossKind kind, double lr) {
    Rng rng(6);
    Network net = build_baseline(ArchConfig::desk(2), rng);
    TrainConfig c = quick_config(3);
    c.loss = kind;
    c.loss_cfg.beta = 0.5;
    c.learning_rate = lr;
    train(net, data, Dataset{}, c);
    return snapshot(net, false);
  };
  CHECK(run(LossKind::balanced, 0.1) == run(LossKind::standard, 0.05));
}

TEST_CASE("history has one ordered record per epoch") {
  const Dataset data = tiny_dataset(3, 8, 2, 5);
  Rng rng(7);
  Network net = build_improved(ArchConfig::desk(2), rng);
  std::vector<std::size_t> seen, due;
  TrainConfig c = quick_config(4);
  c.checkpoint_every = 2;
  const TrainHistory h = train(net, data, Dataset{}, c, [&](const EpochRecord& r, Network&, bool d) {
    seen.push_back(r.epoch);
    if (d) due.push_back(r.epoch);
  });
  REQUIRE(h.epochs.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(h.epochs[k].epoch == k + 1);
  CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK(due == std::vector<std::size_t>{2, 4});
  CHECK(std::isnan(h.epochs[0].val_loss));
  CHECK(h.epochs[0].seconds == 0.0);

  const std::string csv = history_csv(h);
  CHECK(csv.rfind("epoch,train_loss,val_loss,val_miou,seconds\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  CHECK(lines == 5);
}

TEST_CASE("validation does not change parameters") {
  const Dataset data = tiny_dataset(4, 16, 2, 8);
  Rng rng(9);
  Network net = build_improved(ArchConfig::desk(2), rng);
  const auto before = snapshot(net, false);
  evaluate(net, data);
  CHECK(snapshot(net, false) == before);
  CHECK(net.training());
}

TEST_CASE("evaluation is independent of batch size") {
  const Dataset data = tiny_dataset(5, 16, 3, 10);
  Rng rng(11);
  Network net = build_improved(ArchConfig::desk(3), rng);
  train(net, data, Dataset{}, quick_config(1));
  EvalOptions o1, o4;
  o1.batch_size = 1;
  o4.batch_size = 4;
  const MetricsReport a = evaluate(net, data, o1);
  const MetricsReport b = evaluate(net, data, o4);
  CHECK(a.confusion == b.confusion);
  CHECK(a.mean_iou == b.mean_iou);
  CHECK(a.mean_loss == b.mean_loss);

  double mean = 0.0;
  for (const auto& row : a.per_class) mean += row.iou;
  CHECK(std::abs(a.mean_iou - mean / static_cast<double>(a.per_class.size())) < 1e-9);
}

TEST_CASE("ground truth as prediction source gives mIoU 1") {
  const Dataset data = tiny_dataset(3, 16, 3, 12);
  ConfusionMatrix c(3);
  for (const auto& s : data.samples) c.accumulate(s.labels, s.labels);
  CHECK(miou(c) == 1.0);
}

TEST_CASE("single-sample overfit") {
  SynthConfig s;
  s.count = 1;
  s.size = 16;
  s.class_count = 2;
  s.foreground_rate = 0.25;
  s.seed = 21;
  const Dataset data = generate_synthetic(s);
  Rng rng(22);
  Network net = build_improved(ArchConfig::desk(2), rng);
  TrainConfig c;
  c.epoch_limit = 200;
  c.batch_size = 1;
  c.seed = 23;
  const TrainHistory h = train(net, data, Dataset{}, c);
  const MetricsReport r = evaluate(net, data);
  INFO("final train loss " << h.epochs.back().train_loss << ", eval loss " << r.mean_loss);
  CHECK(h.epochs.back().train_loss < 0.05);
  CHECK(r.mean_iou == 1.0);
}
