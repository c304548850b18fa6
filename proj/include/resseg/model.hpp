#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "resseg/layers.hpp"
#include "resseg/tensor.hpp"

namespace resseg {

enum class Architecture { improved, baseline };

const char* to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

struct ArchConfig {
  Architecture arch = Architecture::improved;
  std::size_t input_channels = 3;
  std::size_t class_count = 2;
  std::size_t c1 = 64;
  std::size_t c2 = 128;
  std::size_t c3 = 256;
  std::size_t convs_per_stage = 1;
  std::size_t kernel = 3;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;

  /// Stage widths (16, 32, 64) for CPU-sized runs.
  static ArchConfig desk(std::size_t class_count, Architecture arch = Architecture::improved);
  /// Stage widths (64, 128, 256).
  static ArchConfig paper(std::size_t class_count, Architecture arch = Architecture::improved);

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

enum class NodeKind {
  input,
  conv,
  deconv,
  batchnorm,
  relu,
  maxpool,
  maxunpool,
  fuse_add,
  concat,
  softmax,
};

struct ParameterEntry {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;
};

using GradientTable = std::map<std::string, Tensor>;

/// Topologically ordered graph of layer nodes. forward() caches every node
/// output plus the pooling indices so backward() and the unpooling nodes can
/// reuse them. Parameter storage never moves once built, so a Network is
/// move-only.
class Network {
 public:
  explicit Network(ArchConfig cfg);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const ArchConfig& config() const noexcept { return cfg_; }

  // Graph construction. Each returns the new node id.
  int add_input();
  int add_conv(const std::string& name, int input, std::size_t in_ch, std::size_t out_ch,
               std::size_t kernel, Rng& rng);
  int add_deconv(const std::string& name, int input, std::size_t in_ch, std::size_t out_ch,
                 std::size_t kernel, Rng& rng);
  int add_batchnorm(const std::string& name, int input, std::size_t channels);
  int add_relu(const std::string& name, int input);
  int add_maxpool(const std::string& name, int input);
  /// Unpools `input` with the indices recorded by `pool_node`.
  int add_maxunpool(const std::string& name, int input, int pool_node);
  int add_fuse_add(const std::string& name, int a, int b);
  int add_concat(const std::string& name, int a, int b);
  int add_softmax(const std::string& name, int input);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  NodeKind node_kind(int id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }
  const std::string& node_name(int id) const { return nodes_.at(static_cast<std::size_t>(id)).name; }
  const std::vector<int>& node_inputs(int id) const {
    return nodes_.at(static_cast<std::size_t>(id)).inputs;
  }
  /// Pooling node feeding an unpooling node, -1 otherwise.
  int pool_source(int id) const { return nodes_.at(static_cast<std::size_t>(id)).pool_source; }
  int find_node(const std::string& name) const;

  /// Replaces one input edge of a node with zeros of the same shape. The edge
  /// then carries no gradient. Used for ablations.
  void zero_input(const std::string& node, std::size_t slot);

  void set_training(bool training) noexcept { training_ = training; }
  bool training() const noexcept { return training_; }

  /// x: B x input_channels x H x W with H, W positive multiples of 8.
  /// Returns per-pixel class probabilities B x C x H x W.
  Tensor forward(const Tensor& x);

  /// Overwrites every trainable gradient buffer. Throws StateError without a
  /// live forward pass.
  GradientTable backward(const Tensor& dloss_dprob);

  /// Gradient w.r.t. the network input from the last backward.
  const Tensor& input_gradient() const;

  /// Output of a node from the last forward.
  const Tensor& activation(int id) const;
  /// Argmax record of a pooling node from the last forward.
  const layers::PoolIndices& pool_indices(int id) const;

  std::vector<ParameterEntry>& parameters() noexcept { return params_; }
  const std::vector<ParameterEntry>& parameters() const noexcept { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;
  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  struct Node {
    NodeKind kind;
    std::string name;
    std::vector<int> inputs;
    std::vector<bool> zeroed{};
    int pool_source = -1;
    Tensor* weight = nullptr;
    Tensor* bias = nullptr;
    layers::BatchNormState* bn = nullptr;
  };

  int push(Node node);
  void check_input(const Tensor& x) const;
  Tensor& register_tensor(const std::string& name, Tensor value, bool trainable);

  ArchConfig cfg_;
  std::vector<Node> nodes_;
  std::deque<Tensor> tensor_store_;
  std::deque<layers::BatchNormState> bn_store_;
  std::vector<ParameterEntry> params_;
  bool training_ = true;

  // Forward caches.
  bool have_forward_ = false;
  std::vector<Tensor> outputs_;
  std::vector<layers::PoolIndices> pool_indices_;
  std::vector<layers::BatchNormCache> bn_caches_;
  Tensor input_grad_;
};

/// Encoder (three conv stages, three 2x2 pools) and a decoder that unpools
/// with the stage-matched indices, adds the encoder map of that resolution,
/// deconvolves, and finally concatenates the first encoder map before a 1x1
/// classifier and softmax.
Network build_improved(const ArchConfig& cfg, Rng& rng);

/// Same encoder; decoder only unpools and deconvolves, classifier sees c1
/// channels.
Network build_baseline(const ArchConfig& cfg, Rng& rng);

/// Dispatches on cfg.arch.
Network build_network(const ArchConfig& cfg, Rng& rng);

}  // namespace resseg
