#include "resseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "resseg/errors.hpp"
#include "resseg/layers.hpp"
#include "resseg/loss.hpp"
#include "resseg/model.hpp"

namespace resseg {

namespace {

namespace L = layers;

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Analytic gradient vs central differences of f over all entries of x.
double compare(const ScalarFunction& f, const Tensor& x, const Tensor& analytic, double eps) {
  const Tensor numeric = finite_diff_grad(f, x, eps);
  return max_relative_error(analytic.data(), numeric.data());
}

// Values bounded away from zero so no probe crosses the ReLU kink.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Each 2x2 window gets a unique maximum that leads the runner-up by >= 0.05.
Tensor separated_windows(const Shape& shape, Rng& rng) {
  Tensor t = random_uniform(shape, -1.0, 1.0, rng);
  const std::size_t h = shape[2];
  const std::size_t w = shape[3];
  for (std::size_t plane = 0; plane < shape[0] * shape[1]; ++plane) {
    double* p = t.raw() + plane * h * w;
    for (std::size_t i = 0; i < h; i += 2) {
      for (std::size_t j = 0; j < w; j += 2) {
        const std::size_t cells[4] = {i * w + j, i * w + j + 1, (i + 1) * w + j, (i + 1) * w + j + 1};
        const std::size_t winner = cells[rng.below(4)];
        double runner_up = -1.0;
        for (auto c : cells) {
          if (c != winner) runner_up = std::max(runner_up, p[c]);
        }
        p[winner] = runner_up + rng.uniform(0.05, 0.5);
      }
    }
  }
  return t;
}

GradCheckTarget check_conv(const GradCheckOptions& o, Rng& rng, bool transposed) {
  const Tensor x = random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng);
  const Tensor w = transposed ? random_uniform({3, 4, 3, 3}, -0.5, 0.5, rng)
                              : random_uniform({4, 3, 3, 3}, -0.5, 0.5, rng);
  const Tensor b = random_uniform({4}, -0.5, 0.5, rng);
  const Tensor r = random_uniform({1, 4, 8, 8}, -1.0, 1.0, rng);
  auto fwd = [transposed](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    return transposed ? L::deconv(xx, ww, bb) : L::conv2d(xx, ww, bb);
  };
  const auto g = transposed ? L::deconv_backward(x, w, r) : L::conv2d_backward(x, w, r);
  double err = 0.0;
  err = std::max(err, compare([&](const Tensor& t) { return dot(r, fwd(t, w, b)); }, x, g.dx, o.eps));
  err = std::max(err, compare([&](const Tensor& t) { return dot(r, fwd(x, t, b)); }, w, g.dw, o.eps));
  err = std::max(err, compare([&](const Tensor& t) { return dot(r, fwd(x, w, t)); }, b, g.db, o.eps));
  return {transposed ? "deconv" : "conv2d", err, x.size() + w.size() + b.size(), false};
}

GradCheckTarget check_batchnorm(const GradCheckOptions& o, Rng& rng) {
  const Tensor x = random_uniform({1, 3, 8, 8}, -1.0, 2.0, rng);
  L::BatchNormState base = L::BatchNormState::identity(3);
  base.gamma = random_uniform({3}, 0.5, 1.5, rng);
  base.beta = random_uniform({3}, -0.5, 0.5, rng);
  const Tensor r = random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng);

  auto eval = [&](const Tensor& xx, const Tensor& gamma, const Tensor& beta) {
    L::BatchNormState s = base;
    s.gamma = gamma;
    s.beta = beta;
    return dot(r, L::batchnorm(xx, s, true).y);
  };
  L::BatchNormState s = base;
  const auto fwd = L::batchnorm(x, s, true);
  const auto g = L::batchnorm_backward(fwd.cache, base, r);
  double err = 0.0;
  err = std::max(err, compare([&](const Tensor& t) { return eval(t, base.gamma, base.beta); }, x, g.dx, o.eps));
  err = std::max(err,
                 compare([&](const Tensor& t) { return eval(x, t, base.beta); }, base.gamma, g.dgamma, o.eps));
  err = std::max(err,
                 compare([&](const Tensor& t) { return eval(x, base.gamma, t); }, base.beta, g.dbeta, o.eps));
  return {"batchnorm", err, x.size() + 6, false};
}

GradCheckTarget check_relu(const GradCheckOptions& o, Rng& rng) {
  const Tensor x = away_from_zero({1, 3, 8, 8}, rng);
  const Tensor r = random_uniform(x.shape(), -1.0, 1.0, rng);
  const Tensor dx = L::relu_backward(x, r);
  return {"relu", compare([&](const Tensor& t) { return dot(r, L::relu(t)); }, x, dx, o.eps), x.size(), false};
}

GradCheckTarget check_maxpool(const GradCheckOptions& o, Rng& rng) {
  const Tensor x = separated_windows({1, 3, 8, 8}, rng);
  const Tensor r = random_uniform({1, 3, 4, 4}, -1.0, 1.0, rng);
  const auto pooled = L::maxpool2(x);
  const Tensor dx = L::maxpool2_backward(r, pooled.indices);
  return {"maxpool2", compare([&](const Tensor& t) { return dot(r, L::maxpool2(t).y); }, x, dx, o.eps),
          x.size(), false};
}

GradCheckTarget check_maxunpool(const GradCheckOptions& o, Rng& rng) {
  const auto pooled = L::maxpool2(random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng));
  const Tensor y = random_uniform({1, 3, 4, 4}, -1.0, 1.0, rng);
  const Tensor r = random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng);
  const Tensor dy = L::maxunpool2_backward(r, pooled.indices);
  auto f = [&](const Tensor& t) { return dot(r, L::maxunpool2(t, pooled.indices, 8, 8)); };
  return {"maxunpool2", compare(f, y, dy, o.eps), y.size(), false};
}

GradCheckTarget check_fuse(const GradCheckOptions& o, Rng& rng) {
  const Tensor a = random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng);
  const Tensor b = random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng);
  const Tensor r = random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng);
  // Both inputs receive the upstream gradient unchanged.
  double err = compare([&](const Tensor& t) { return dot(r, L::fuse_add(t, b)); }, a, r, o.eps);
  err = std::max(err, compare([&](const Tensor& t) { return dot(r, L::fuse_add(a, t)); }, b, r, o.eps));
  return {"fuse_add", err, a.size() + b.size(), false};
}

GradCheckTarget check_concat(const GradCheckOptions& o, Rng& rng) {
  const Tensor a = random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng);
  const Tensor b = random_uniform({1, 2, 8, 8}, -1.0, 1.0, rng);
  const Tensor r = random_uniform({1, 5, 8, 8}, -1.0, 1.0, rng);
  const auto parts = L::split_channels(r, 3);
  double err = compare([&](const Tensor& t) { return dot(r, L::concat_channels(t, b)); }, a, parts.first, o.eps);
  err = std::max(err,
                 compare([&](const Tensor& t) { return dot(r, L::concat_channels(a, t)); }, b, parts.second, o.eps));
  return {"concat_channels", err, a.size() + b.size(), false};
}

GradCheckTarget check_softmax(const GradCheckOptions& o, Rng& rng) {
  const Tensor x = random_uniform({1, 3, 8, 8}, -2.0, 2.0, rng);
  const Tensor r = random_uniform(x.shape(), -1.0, 1.0, rng);
  const Tensor dx = L::softmax_backward(L::softmax_pixels(x), r);
  return {"softmax_pixels", compare([&](const Tensor& t) { return dot(r, L::softmax_pixels(t)); }, x, dx, o.eps),
          x.size(), false};
}

LabelMap random_labels(std::size_t b, std::size_t h, std::size_t w, std::size_t classes, Rng& rng,
                       bool with_ignore) {
  LabelMap l(b, h, w);
  for (auto& id : l.ids) {
    id = static_cast<int>(rng.below(classes));
    if (with_ignore && rng.uniform() < 0.1) id = kIgnoreId;
  }
  return l;
}

GradCheckTarget check_loss(const GradCheckOptions& o, Rng& rng, LossKind kind) {
  const Tensor prob = L::softmax_pixels(random_uniform({1, 3, 8, 8}, -1.0, 1.0, rng));
  const LabelMap labels = random_labels(1, 8, 8, 3, rng, true);
  LossConfig cfg;
  cfg.beta = 0.7;
  const auto res = compute_loss(kind, prob, labels, cfg);
  auto f = [&](const Tensor& p) { return compute_loss(kind, p, labels, cfg).value; };
  return {kind == LossKind::standard ? "ce_loss" : "balanced_ce_loss", compare(f, prob, res.grad, o.eps),
          prob.size(), false};
}

// ReLU on/off pattern and pooling argmaxes of the last forward. Central
// differences are only meaningful when both probes see the same pattern.
std::vector<std::size_t> kink_pattern(const Network& net) {
  std::vector<std::size_t> sig;
  for (std::size_t id = 0; id < net.node_count(); ++id) {
    const int n = static_cast<int>(id);
    if (net.node_kind(n) == NodeKind::relu) {
      for (double v : net.activation(n).data()) sig.push_back(v > 0.0 ? 1 : 0);
    } else if (net.node_kind(n) == NodeKind::maxpool) {
      const auto& a = net.pool_indices(n).argmax;
      sig.insert(sig.end(), a.begin(), a.end());
    }
  }
  return sig;
}

GradCheckTarget check_network(const GradCheckOptions& o, Rng& rng, Architecture arch) {
  Network net = build_network(ArchConfig::desk(2, arch), rng);
  net.set_training(true);
  const Tensor x = random_uniform({1, 3, 8, 8}, 0.0, 1.0, rng);
  const LabelMap labels = random_labels(1, 8, 8, 2, rng, false);
  const LossConfig cfg;

  const auto res = ce_loss(net.forward(x), labels, cfg);
  const auto pattern = kink_pattern(net);
  const GradientTable grads = net.backward(res.grad);

  GradCheckTarget t{arch == Architecture::improved ? "network_improved" : "network_baseline", 0.0, 0, 0, false};
  for (auto& p : net.parameters()) {
    if (!p.trainable) continue;
    Tensor& value = *p.tensor;
    const Tensor& analytic = grads.at(p.name);
    std::vector<std::size_t> idx(value.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx, rng);
    std::size_t accepted = 0;
    for (auto i : idx) {
      if (accepted == o.probes_per_tensor) break;
      const double saved = value[i];
      value[i] = saved + o.eps;
      const double up = ce_loss(net.forward(x), labels, cfg).value;
      const bool up_smooth = kink_pattern(net) == pattern;
      value[i] = saved - o.eps;
      const double down = ce_loss(net.forward(x), labels, cfg).value;
      const bool down_smooth = kink_pattern(net) == pattern;
      value[i] = saved;
      if (!up_smooth || !down_smooth) {
        ++t.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * o.eps);
      const double a = analytic[i];
      t.max_rel_error = std::max(t.max_rel_error, max_relative_error(std::span(&a, 1), std::span(&numeric, 1)));
      ++t.probes;
      ++accepted;
    }
  }
  if (t.probes == 0) throw NumericError(t.name + ": every probe crossed a kink");
  return t;
}

}  // namespace

const std::vector<std::string>& gradcheck_target_names() {
  static const std::vector<std::string> names = {
      "conv2d",         "batchnorm", "relu",    "maxpool2",         "maxunpool2",
      "deconv",         "fuse_add",  "concat_channels", "softmax_pixels", "ce_loss",
      "balanced_ce_loss", "network_improved", "network_baseline"};
  return names;
}

std::vector<GradCheckTarget> run_gradcheck(const GradCheckOptions& opts) {
  const auto& names = gradcheck_target_names();
  if (opts.only && std::find(names.begin(), names.end(), *opts.only) == names.end()) {
    throw ConfigError("unknown gradcheck target '" + *opts.only + "'");
  }
  std::vector<GradCheckTarget> out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& name = names[k];
    if (opts.only && *opts.only != name) continue;
    // Per-target stream so restricting to one target reproduces its full-run numbers.
    Rng rng(opts.seed + 7919 * k);
    GradCheckTarget t;
    if (name == "conv2d") t = check_conv(opts, rng, false);
    else if (name == "deconv") t = check_conv(opts, rng, true);
    else if (name == "batchnorm") t = check_batchnorm(opts, rng);
    else if (name == "relu") t = check_relu(opts, rng);
    else if (name == "maxpool2") t = check_maxpool(opts, rng);
    else if (name == "maxunpool2") t = check_maxunpool(opts, rng);
    else if (name == "fuse_add") t = check_fuse(opts, rng);
    else if (name == "concat_channels") t = check_concat(opts, rng);
    else if (name == "softmax_pixels") t = check_softmax(opts, rng);
    else if (name == "ce_loss") t = check_loss(opts, rng, LossKind::standard);
    else if (name == "balanced_ce_loss") t = check_loss(opts, rng, LossKind::balanced);
    else if (name == "network_improved") t = check_network(opts, rng, Architecture::improved);
    else t = check_network(opts, rng, Architecture::baseline);
    t.passed = t.max_rel_error < opts.tol;
    out.push_back(t);
  }
  return out;
}

}  // namespace resseg
