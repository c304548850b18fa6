#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "resseg/errors.hpp"
#include "resseg/gradcheck.hpp"
#include "resseg/model.hpp"

using namespace resseg;

namespace {

void check_pixel_sums(const Tensor& prob, double tol) {
  const std::size_t B = prob.dim(0), C = prob.dim(1), H = prob.dim(2), W = prob.dim(3);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += prob.at(n, c, i, j);
        CHECK(std::abs(s - 1.0) <= tol);
      }
}

Tensor batch_slice(const Tensor& x, std::size_t n) {
  Shape s = x.shape();
  s[0] = 1;
  Tensor out(s);
  const std::size_t plane = x.size() / x.dim(0);
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(n * plane), plane, out.data().begin());
  return out;
}

}  // namespace

TEST_CASE("architecture names round trip") {
  CHECK(parse_architecture("improved") == Architecture::improved);
  CHECK(parse_architecture("baseline") == Architecture::baseline);
  CHECK(std::string(to_string(Architecture::baseline)) == "baseline");
  CHECK_THROWS_AS(parse_architecture("unet"), ConfigError);
}

TEST_CASE("config validation") {
  ArchConfig c = ArchConfig::desk(2);
  CHECK_NOTHROW(c.validate());
  c.class_count = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ArchConfig::desk(2);
  c.kernel = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ArchConfig::desk(2);
  c.convs_per_stage = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("default config gives a full-size output summing to one") {
  Rng rng(1);
  Network net = build_improved(ArchConfig::paper(3), rng);
  const Tensor x = random_uniform({1, 3, 64, 64}, 0.0, 1.0, rng);
  const Tensor y = net.forward(x);
  CHECK(y.shape() == Shape{1, 3, 64, 64});
  check_pixel_sums(y, 1e-6);
}

TEST_CASE("minimum input traces three halvings") {
  Rng rng(2);
  Network net = build_improved(ArchConfig::desk(2), rng);
  const Tensor y = net.forward(random_uniform({1, 3, 8, 8}, 0.0, 1.0, rng));
  CHECK(net.activation(net.find_node("pool3")).shape() == Shape{1, 64, 1, 1});
  CHECK(y.shape() == Shape{1, 2, 8, 8});
}

TEST_CASE("channel trace of the improved network") {
  Rng rng(3);
  Network net = build_improved(ArchConfig::paper(5), rng);
  net.forward(random_uniform({1, 3, 8, 8}, 0.0, 1.0, rng));
  auto ch = [&](const char* name) { return net.activation(net.find_node(name)).dim(1); };
  CHECK(ch("enc1.relu0") == 64);
  CHECK(ch("enc2.relu0") == 128);
  CHECK(ch("enc3.relu0") == 256);
  CHECK(ch("pool3") == 256);
  CHECK(ch("fuse3") == 256);
  CHECK(ch("dec3.relu") == 128);
  CHECK(ch("fuse2") == 128);
  CHECK(ch("dec2.relu") == 64);
  CHECK(ch("concat") == 128);
  CHECK(ch("classifier") == 5);
}

TEST_CASE("each unpooling consumes its resolution-matched pool") {
  Rng rng(4);
  Network net = build_improved(ArchConfig::desk(2), rng);
  CHECK(net.pool_source(net.find_node("unpool3")) == net.find_node("pool3"));
  CHECK(net.pool_source(net.find_node("unpool2")) == net.find_node("pool2"));
  CHECK(net.pool_source(net.find_node("unpool1")) == net.find_node("pool1"));
  for (std::size_t id = 0; id < net.node_count(); ++id)
    for (int in : net.node_inputs(static_cast<int>(id))) CHECK(in < static_cast<int>(id));
}

TEST_CASE("non-divisible sizes are rejected") {
  Rng rng(5);
  for (Architecture a : {Architecture::improved, Architecture::baseline}) {
    Network net = build_network(ArchConfig::desk(2, a), rng);
    CHECK_THROWS_AS(net.forward(Tensor({1, 3, 12, 12}, 0.5)), ShapeError);
    CHECK_THROWS_AS(net.forward(Tensor({1, 3, 16, 20}, 0.5)), ShapeError);
    CHECK_THROWS_AS(net.forward(Tensor({1, 1, 16, 16}, 0.5)), ShapeError);
  }
}

TEST_CASE("baseline has fewer parameters and differs only in the classifier") {
  Rng r1(6), r2(6);
  const ArchConfig cfg = ArchConfig::desk(4);
  Network imp = build_improved(cfg, r1);
  Network base = build_baseline(cfg, r2);
  CHECK(base.parameter_count() < imp.parameter_count());
  CHECK(imp.parameter_count() - base.parameter_count() == cfg.c1 * cfg.class_count);

  const Tensor y = base.forward(random_uniform({2, 3, 16, 8}, 0.0, 1.0, r1));
  CHECK(y.shape() == Shape{2, 4, 16, 8});
  check_pixel_sums(y, 1e-6);
}

TEST_CASE("improved with zeroed skips equals baseline") {
  Rng r1(7), r2(8);
  const ArchConfig cfg = ArchConfig::desk(3);
  Network imp = build_improved(cfg, r1);
  Network base = build_baseline(cfg, r2);

  for (auto& p : base.parameters()) {
    if (p.name == "classifier.weight") continue;
    Tensor& dst = imp.parameter(p.name);
    REQUIRE(dst.shape() == p.tensor->shape());
    std::copy(p.tensor->data().begin(), p.tensor->data().end(), dst.data().begin());
  }
  // Classifier restricted to the first c1 input channels.
  Tensor& w = imp.parameter("classifier.weight");
  const Tensor& wb = base.parameter("classifier.weight");
  for (std::size_t o = 0; o < cfg.class_count; ++o)
    for (std::size_t c = 0; c < 2 * cfg.c1; ++c) w.at(o, c, 0, 0) = c < cfg.c1 ? wb.at(o, c, 0, 0) : 0.0;

  imp.zero_input("fuse3", 1);
  imp.zero_input("fuse2", 1);
  imp.zero_input("fuse1", 1);

  Rng rx(9);
  const Tensor x = random_uniform({2, 3, 16, 16}, 0.0, 1.0, rx);
  for (bool training : {false, true}) {
    imp.set_training(training);
    base.set_training(training);
    CHECK(max_abs_diff(imp.forward(x).data(), base.forward(x).data()) < 1e-12);
  }
  CHECK_THROWS_AS(imp.zero_input("fuse3", 2), StateError);
  CHECK_THROWS_AS(imp.zero_input("nope", 0), StateError);
}

TEST_CASE("two forwards agree bitwise") {
  Rng rng(10);
  Network net = build_improved(ArchConfig::desk(2), rng);
  const Tensor x = random_uniform({2, 3, 16, 16}, 0.0, 1.0, rng);
  const Tensor a = net.forward(x);
  const Tensor b = net.forward(x);
  CHECK(a.equals(b));
  net.set_training(false);
  CHECK(net.forward(x).equals(net.forward(x)));
}

TEST_CASE("inference forward is equivariant to batch permutation") {
  Rng rng(11);
  Network net = build_improved(ArchConfig::desk(2), rng);
  net.set_training(false);
  const Tensor x = random_uniform({3, 3, 8, 8}, 0.0, 1.0, rng);
  const std::size_t perm[3] = {2, 0, 1};
  Tensor xp(x.shape());
  const std::size_t plane = x.size() / 3;
  for (std::size_t n = 0; n < 3; ++n)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(perm[n] * plane), plane,
                xp.data().begin() + static_cast<std::ptrdiff_t>(n * plane));
  const Tensor y = net.forward(x);
  const Tensor yp = net.forward(xp);
  for (std::size_t n = 0; n < 3; ++n) CHECK(batch_slice(yp, n).equals(batch_slice(y, perm[n])));
}

TEST_CASE("backward without a forward is a state error") {
  Rng rng(12);
  Network net = build_baseline(ArchConfig::desk(2), rng);
  CHECK_THROWS_AS(net.backward(Tensor({1, 2, 8, 8}, 0.0)), StateError);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Rng rng(13);
  Network net = build_improved(ArchConfig::desk(2), rng);
  const Tensor y = net.forward(random_uniform({1, 3, 8, 8}, 0.0, 1.0, rng));
  const GradientTable g = net.backward(Tensor(y.shape(), 0.0));
  CHECK_FALSE(g.empty());
  for (const auto& [name, t] : g)
    for (double v : t.data()) CHECK(v == 0.0);
}

TEST_CASE("gradients add over a batch of identical samples") {
  Rng rng(14);
  Network net = build_improved(ArchConfig::desk(2), rng);
  net.set_training(false);
  const Tensor x1 = random_uniform({1, 3, 8, 8}, 0.0, 1.0, rng);
  const Tensor d1 = random_uniform({1, 2, 8, 8}, -1.0, 1.0, rng);
  Tensor x2({2, 3, 8, 8});
  Tensor d2({2, 2, 8, 8});
  for (std::size_t n = 0; n < 2; ++n) {
    std::copy(x1.data().begin(), x1.data().end(), x2.data().begin() + static_cast<std::ptrdiff_t>(n * x1.size()));
    std::copy(d1.data().begin(), d1.data().end(), d2.data().begin() + static_cast<std::ptrdiff_t>(n * d1.size()));
  }
  net.forward(x1);
  const GradientTable g1 = net.backward(d1);
  net.forward(x2);
  const GradientTable g2 = net.backward(d2);
  REQUIRE(g1.size() == g2.size());
  for (const auto& [name, t] : g1) {
    const Tensor& t2 = g2.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t2[i] - 2.0 * t[i]) <= 1e-10 * (1.0 + std::abs(t[i])));
  }
}

TEST_CASE("full-graph gradient check on desk-scale networks") {
  for (std::string target : {"network_improved", "network_baseline"}) {
    GradCheckOptions o;
    o.only = target;
    const auto r = run_gradcheck(o);
    REQUIRE(r.size() == 1);
    INFO(target << " max rel error " << r[0].max_rel_error);
    CHECK(r[0].max_rel_error < 1e-4);
    CHECK(r[0].passed);
    CHECK(r[0].probes > 0);
  }
}

TEST_CASE("network moves keep parameter pointers valid") {
  Rng rng(15);
  Network a = build_improved(ArchConfig::desk(2), rng);
  const Tensor* before = a.parameters().front().tensor;
  Network b = std::move(a);
  CHECK(b.parameters().front().tensor == before);
  CHECK(b.forward(Tensor({1, 3, 8, 8}, 0.5)).shape() == Shape{1, 2, 8, 8});
}
