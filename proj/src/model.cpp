#include "resseg/model.hpp"

#include <algorithm>

#include "resseg/errors.hpp"

namespace resseg {

const char* to_string(Architecture arch) {
  return arch == Architecture::improved ? "improved" : "baseline";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "improved") return Architecture::improved;
  if (name == "baseline") return Architecture::baseline;
  throw ConfigError("unknown architecture '" + name + "' (expected improved or baseline)");
}

ArchConfig ArchConfig::desk(std::size_t class_count, Architecture arch) {
  ArchConfig cfg;
  cfg.arch = arch;
  cfg.class_count = class_count;
  cfg.c1 = 16;
  cfg.c2 = 32;
  cfg.c3 = 64;
  return cfg;
}

ArchConfig ArchConfig::paper(std::size_t class_count, Architecture arch) {
  ArchConfig cfg;
  cfg.arch = arch;
  cfg.class_count = class_count;
  return cfg;
}

void ArchConfig::validate() const {
  if (input_channels < 1) throw ConfigError("input_channels must be at least 1");
  if (class_count < 2) throw ConfigError("class_count must be at least 2");
  if (!(c1 >= 1 && c1 < c2 && c2 < c3)) {
    throw ConfigError("stage channels must satisfy 1 <= c1 < c2 < c3");
  }
  if (convs_per_stage < 1) throw ConfigError("convs_per_stage must be at least 1");
  if (kernel % 2 == 0) throw ConfigError("kernel size must be odd");
  if (!(bn_epsilon > 0.0)) throw ConfigError("batchnorm epsilon must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) {
    throw ConfigError("batchnorm stat momentum must lie in (0, 1)");
  }
}

Network::Network(ArchConfig cfg) : cfg_(cfg) {
  cfg_.validate();
}

int Network::push(Node node) {
  for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) {
    const int in = node.inputs[slot];
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw StateError("node '" + node.name + "' references a node that does not exist yet");
    }
  }
  if (find_node(node.name) >= 0) throw StateError("duplicate node name '" + node.name + "'");
  node.zeroed.assign(node.inputs.size(), false);
  nodes_.push_back(std::move(node));
  have_forward_ = false;
  return static_cast<int>(nodes_.size() - 1);
}

Tensor& Network::register_tensor(const std::string& name, Tensor value, bool trainable) {
  tensor_store_.push_back(std::move(value));
  Tensor& t = tensor_store_.back();
  if (trainable) t.ensure_grad();
  params_.push_back({name, &t, trainable});
  return t;
}

int Network::add_input() {
  if (!nodes_.empty()) throw StateError("the input node must be the first node");
  return push({NodeKind::input, "input", {}});
}

int Network::add_conv(const std::string& name, int input, std::size_t in_ch, std::size_t out_ch,
                      std::size_t kernel, Rng& rng) {
  Node n{NodeKind::conv, name, {input}};
  n.weight = &register_tensor(name + ".weight",
                              he_init({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng),
                              true);
  n.bias = &register_tensor(name + ".bias", Tensor({out_ch}, 0.0), true);
  return push(std::move(n));
}

int Network::add_deconv(const std::string& name, int input, std::size_t in_ch, std::size_t out_ch,
                        std::size_t kernel, Rng& rng) {
  Node n{NodeKind::deconv, name, {input}};
  n.weight = &register_tensor(name + ".weight",
                              he_init({in_ch, out_ch, kernel, kernel}, in_ch * kernel * kernel, rng),
                              true);
  n.bias = &register_tensor(name + ".bias", Tensor({out_ch}, 0.0), true);
  return push(std::move(n));
}

int Network::add_batchnorm(const std::string& name, int input, std::size_t channels) {
  Node n{NodeKind::batchnorm, name, {input}};
  bn_store_.push_back(layers::BatchNormState::identity(channels));
  auto& state = bn_store_.back();
  state.epsilon = cfg_.bn_epsilon;
  state.stat_momentum = cfg_.bn_momentum;
  state.gamma.ensure_grad();
  state.beta.ensure_grad();
  params_.push_back({name + ".gamma", &state.gamma, true});
  params_.push_back({name + ".beta", &state.beta, true});
  params_.push_back({name + ".running_mean", &state.running_mean, false});
  params_.push_back({name + ".running_var", &state.running_var, false});
  n.bn = &state;
  return push(std::move(n));
}

int Network::add_relu(const std::string& name, int input) {
  return push({NodeKind::relu, name, {input}});
}

int Network::add_maxpool(const std::string& name, int input) {
  return push({NodeKind::maxpool, name, {input}});
}

int Network::add_maxunpool(const std::string& name, int input, int pool_node) {
  if (pool_node < 0 || static_cast<std::size_t>(pool_node) >= nodes_.size() ||
      nodes_[static_cast<std::size_t>(pool_node)].kind != NodeKind::maxpool) {
    throw StateError("unpooling node '" + name + "' must reference a pooling node");
  }
  Node n{NodeKind::maxunpool, name, {input}};
  n.pool_source = pool_node;
  return push(std::move(n));
}

int Network::add_fuse_add(const std::string& name, int a, int b) {
  return push({NodeKind::fuse_add, name, {a, b}});
}

int Network::add_concat(const std::string& name, int a, int b) {
  return push({NodeKind::concat, name, {a, b}});
}

int Network::add_softmax(const std::string& name, int input) {
  return push({NodeKind::softmax, name, {input}});
}

int Network::find_node(const std::string& name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void Network::zero_input(const std::string& node, std::size_t slot) {
  const int id = find_node(node);
  if (id < 0) throw StateError("no node named '" + node + "'");
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (slot >= n.inputs.size()) throw StateError("node '" + node + "' has no input slot " + std::to_string(slot));
  n.zeroed[slot] = true;
}

void Network::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.input_channels) {
    throw ShapeError("network input must be B x " + std::to_string(cfg_.input_channels) +
                     " x H x W, got " + shape_to_string(x.shape()));
  }
  if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
    throw ShapeError("network input height and width must be multiples of 8, got " +
                     shape_to_string(x.shape()));
  }
}

Tensor Network::forward(const Tensor& x) {
  if (nodes_.empty() || nodes_.front().kind != NodeKind::input) {
    throw StateError("network has no input node");
  }
  check_input(x);
  have_forward_ = false;
  outputs_.assign(nodes_.size(), Tensor());
  pool_indices_.assign(nodes_.size(), layers::PoolIndices());
  bn_caches_.assign(nodes_.size(), layers::BatchNormCache());

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    std::vector<Tensor> zeros(n.inputs.size());
    auto in = [&](std::size_t slot) -> const Tensor& {
      const Tensor& src = outputs_[static_cast<std::size_t>(n.inputs[slot])];
      if (!n.zeroed[slot]) return src;
      if (zeros[slot].empty()) zeros[slot] = Tensor(src.shape(), 0.0);
      return zeros[slot];
    };
    switch (n.kind) {
      case NodeKind::input:
        outputs_[id] = x;
        outputs_[id].drop_grad();
        break;
      case NodeKind::conv:
        outputs_[id] = layers::conv2d(in(0), *n.weight, *n.bias);
        break;
      case NodeKind::deconv:
        outputs_[id] = layers::deconv(in(0), *n.weight, *n.bias);
        break;
      case NodeKind::batchnorm: {
        auto r = layers::batchnorm(in(0), *n.bn, training_);
        outputs_[id] = std::move(r.y);
        bn_caches_[id] = std::move(r.cache);
        break;
      }
      case NodeKind::relu:
        outputs_[id] = layers::relu(in(0));
        break;
      case NodeKind::maxpool: {
        auto r = layers::maxpool2(in(0));
        outputs_[id] = std::move(r.y);
        pool_indices_[id] = std::move(r.indices);
        break;
      }
      case NodeKind::maxunpool: {
        const auto& idx = pool_indices_[static_cast<std::size_t>(n.pool_source)];
        outputs_[id] = layers::maxunpool2(in(0), idx, idx.source_height, idx.source_width);
        break;
      }
      case NodeKind::fuse_add:
        outputs_[id] = layers::fuse_add(in(0), in(1));
        break;
      case NodeKind::concat:
        outputs_[id] = layers::concat_channels(in(0), in(1));
        break;
      case NodeKind::softmax:
        outputs_[id] = layers::softmax_pixels(in(0));
        break;
    }
  }
  have_forward_ = true;
  return outputs_.back();
}

GradientTable Network::backward(const Tensor& dloss_dprob) {
  if (!have_forward_) throw StateError("backward called without a preceding forward pass");
  if (!dloss_dprob.same_shape(outputs_.back())) {
    throw ShapeError("upstream gradient shape " + shape_to_string(dloss_dprob.shape()) +
                     " does not match network output " + shape_to_string(outputs_.back().shape()));
  }
  zero_grad();
  std::vector<Tensor> douts(nodes_.size());
  douts.back() = dloss_dprob;
  douts.back().drop_grad();

  auto accumulate = [&](const Node& n, std::size_t slot, Tensor&& g) {
    if (n.zeroed[slot]) return;
    Tensor& dst = douts[static_cast<std::size_t>(n.inputs[slot])];
    if (dst.empty()) {
      dst = std::move(g);
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  };
  auto add_into = [](std::span<double> dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };

  for (std::size_t id = nodes_.size(); id-- > 0;) {
    const Node& n = nodes_[id];
    if (douts[id].empty()) continue;
    const Tensor& dy = douts[id];
    auto input_value = [&](std::size_t slot) -> Tensor {
      const Tensor& src = outputs_[static_cast<std::size_t>(n.inputs[slot])];
      return n.zeroed[slot] ? Tensor(src.shape(), 0.0) : src;
    };
    switch (n.kind) {
      case NodeKind::input:
        input_grad_ = dy;
        break;
      case NodeKind::conv: {
        auto g = layers::conv2d_backward(input_value(0), *n.weight, dy);
        add_into(n.weight->grad(), g.dw);
        add_into(n.bias->grad(), g.db);
        accumulate(n, 0, std::move(g.dx));
        break;
      }
      case NodeKind::deconv: {
        auto g = layers::deconv_backward(input_value(0), *n.weight, dy);
        add_into(n.weight->grad(), g.dw);
        add_into(n.bias->grad(), g.db);
        accumulate(n, 0, std::move(g.dx));
        break;
      }
      case NodeKind::batchnorm: {
        auto g = layers::batchnorm_backward(bn_caches_[id], *n.bn, dy);
        add_into(n.bn->gamma.grad(), g.dgamma);
        add_into(n.bn->beta.grad(), g.dbeta);
        accumulate(n, 0, std::move(g.dx));
        break;
      }
      case NodeKind::relu:
        accumulate(n, 0, layers::relu_backward(input_value(0), dy));
        break;
      case NodeKind::maxpool:
        accumulate(n, 0, layers::maxpool2_backward(dy, pool_indices_[id]));
        break;
      case NodeKind::maxunpool:
        accumulate(n, 0,
                   layers::maxunpool2_backward(
                       dy, pool_indices_[static_cast<std::size_t>(n.pool_source)]));
        break;
      case NodeKind::fuse_add:
        accumulate(n, 0, Tensor(dy));
        accumulate(n, 1, Tensor(dy));
        break;
      case NodeKind::concat: {
        auto parts = layers::split_channels(dy, outputs_[static_cast<std::size_t>(n.inputs[0])].dim(1));
        accumulate(n, 0, std::move(parts.first));
        accumulate(n, 1, std::move(parts.second));
        break;
      }
      case NodeKind::softmax:
        accumulate(n, 0, layers::softmax_backward(outputs_[id], dy));
        break;
    }
  }

  GradientTable table;
  for (const auto& p : params_) {
    if (p.trainable) table.emplace(p.name, p.tensor->grad_tensor());
  }
  return table;
}

const Tensor& Network::input_gradient() const {
  if (input_grad_.empty()) throw StateError("no input gradient available");
  return input_grad_;
}

const Tensor& Network::activation(int id) const {
  if (!have_forward_) throw StateError("no forward pass cached");
  return outputs_.at(static_cast<std::size_t>(id));
}

const layers::PoolIndices& Network::pool_indices(int id) const {
  if (!have_forward_) throw StateError("no forward pass cached");
  if (node_kind(id) != NodeKind::maxpool) throw StateError("node '" + node_name(id) + "' is not a pooling node");
  return pool_indices_.at(static_cast<std::size_t>(id));
}

Tensor& Network::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return *p.tensor;
  }
  throw StateError("no parameter named '" + name + "'");
}

const Tensor& Network::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return *p.tensor;
  }
  throw StateError("no parameter named '" + name + "'");
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) {
    if (p.trainable) total += p.tensor->size();
  }
  return total;
}

void Network::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable) p.tensor->zero_grad();
  }
  input_grad_ = Tensor();
}

namespace {

// convs_per_stage x (conv + batchnorm + relu); returns the last relu.
int conv_block(Network& net, const std::string& stage, int input, std::size_t in_ch,
               std::size_t out_ch, Rng& rng) {
  const auto& cfg = net.config();
  int node = input;
  for (std::size_t i = 0; i < cfg.convs_per_stage; ++i) {
    const std::string idx = std::to_string(i);
    node = net.add_conv(stage + ".conv" + idx, node, i == 0 ? in_ch : out_ch, out_ch, cfg.kernel, rng);
    node = net.add_batchnorm(stage + ".bn" + idx, node, out_ch);
    node = net.add_relu(stage + ".relu" + idx, node);
  }
  return node;
}

int deconv_block(Network& net, const std::string& stage, int input, std::size_t in_ch,
                 std::size_t out_ch, Rng& rng) {
  int node = net.add_deconv(stage + ".deconv", input, in_ch, out_ch, net.config().kernel, rng);
  node = net.add_batchnorm(stage + ".bn", node, out_ch);
  return net.add_relu(stage + ".relu", node);
}

struct Encoder {
  int f1, f2, f3;
  int pool1, pool2, pool3;
};

Encoder build_encoder(Network& net, Rng& rng) {
  const auto& cfg = net.config();
  Encoder e{};
  const int x = net.add_input();
  e.f1 = conv_block(net, "enc1", x, cfg.input_channels, cfg.c1, rng);
  e.pool1 = net.add_maxpool("pool1", e.f1);
  e.f2 = conv_block(net, "enc2", e.pool1, cfg.c1, cfg.c2, rng);
  e.pool2 = net.add_maxpool("pool2", e.f2);
  e.f3 = conv_block(net, "enc3", e.pool2, cfg.c2, cfg.c3, rng);
  e.pool3 = net.add_maxpool("pool3", e.f3);
  return e;
}

}  // namespace

Network build_improved(const ArchConfig& cfg, Rng& rng) {
  ArchConfig c = cfg;
  c.arch = Architecture::improved;
  Network net(c);
  const Encoder e = build_encoder(net, rng);

  int node = net.add_maxunpool("unpool3", e.pool3, e.pool3);
  node = net.add_fuse_add("fuse3", node, e.f3);
  node = deconv_block(net, "dec3", node, c.c3, c.c2, rng);

  node = net.add_maxunpool("unpool2", node, e.pool2);
  node = net.add_fuse_add("fuse2", node, e.f2);
  node = deconv_block(net, "dec2", node, c.c2, c.c1, rng);

  node = net.add_maxunpool("unpool1", node, e.pool1);
  node = net.add_fuse_add("fuse1", node, e.f1);
  node = net.add_concat("concat", node, e.f1);

  node = net.add_conv("classifier", node, 2 * c.c1, c.class_count, 1, rng);
  net.add_softmax("softmax", node);
  return net;
}

Network build_baseline(const ArchConfig& cfg, Rng& rng) {
  ArchConfig c = cfg;
  c.arch = Architecture::baseline;
  Network net(c);
  const Encoder e = build_encoder(net, rng);

  int node = net.add_maxunpool("unpool3", e.pool3, e.pool3);
  node = deconv_block(net, "dec3", node, c.c3, c.c2, rng);
  node = net.add_maxunpool("unpool2", node, e.pool2);
  node = deconv_block(net, "dec2", node, c.c2, c.c1, rng);
  node = net.add_maxunpool("unpool1", node, e.pool1);

  node = net.add_conv("classifier", node, c.c1, c.class_count, 1, rng);
  net.add_softmax("softmax", node);
  return net;
}

Network build_network(const ArchConfig& cfg, Rng& rng) {
  return cfg.arch == Architecture::improved ? build_improved(cfg, rng) : build_baseline(cfg, rng);
}

}  // namespace resseg
