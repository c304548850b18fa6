#pragma once

// Differentiable kernels over batch x channels x height x width tensors.
// Every forward has a matching backward that takes the upstream gradient and
// whatever the forward cached, and returns gradients for each input.

#include <cstddef>
#include <vector>

#include "resseg/tensor.hpp"

namespace resseg::layers {

// ---------------------------------------------------------------------------
// Convolution (stride 1, zero "same" padding, odd square kernel)

struct ConvGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};

/// x: B x Cin x H x W, w: Cout x Cin x K x K, b: Cout.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

/// Stride-1 transposed convolution. x: B x Cin x H x W, w: Cin x Cout x K x K,
/// b: Cout. Output keeps the spatial size.
Tensor deconv(const Tensor& x, const Tensor& w, const Tensor& b);
ConvGrads deconv_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

/// Rewrites a Cin x Cout x K x K transposed-convolution kernel as the
/// Cout x Cin x K x K convolution kernel that computes the same map.
Tensor deconv_kernel_as_conv(const Tensor& w);

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormState {
  Tensor gamma;         // C
  Tensor beta;          // C
  Tensor running_mean;  // C
  Tensor running_var;   // C
  double epsilon = 1e-5;
  double stat_momentum = 0.9;

  /// gamma = 1, beta = 0, running mean 0, running variance 1.
  static BatchNormState identity(std::size_t channels);
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> inv_std;
  bool training = false;
};

struct BatchNormResult {
  Tensor y;
  BatchNormCache cache;
};

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};

/// Training mode standardizes with batch statistics and folds them into the
/// running statistics; inference mode reads the running statistics only.
BatchNormResult batchnorm(const Tensor& x, BatchNormState& state, bool training);
BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormState& state,
                                  const Tensor& dy);

// ---------------------------------------------------------------------------
// Elementwise

Tensor relu(const Tensor& x);
/// Gradient is zero where x <= 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

Tensor fuse_add(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// 2x2 max pooling and index-driven unpooling

/// argmax[k] is the flat h * W + w position, inside its channel plane of the
/// pre-pool map, of the maximum feeding pooled element k.
struct PoolIndices {
  Shape pooled_shape;
  std::size_t source_height = 0;
  std::size_t source_width = 0;
  std::vector<std::size_t> argmax;
};

struct PoolResult {
  Tensor y;
  PoolIndices indices;
};

/// Ties resolve to the first maximum in row-major window order.
PoolResult maxpool2(const Tensor& x);
Tensor maxpool2_backward(const Tensor& dy, const PoolIndices& idx);

Tensor maxunpool2(const Tensor& y, const PoolIndices& idx, std::size_t out_h, std::size_t out_w);
Tensor maxunpool2_backward(const Tensor& dout, const PoolIndices& idx);

// ---------------------------------------------------------------------------
// Channel concatenation

Tensor concat_channels(const Tensor& a, const Tensor& b);

struct ChannelSplit {
  Tensor first;
  Tensor second;
};

/// Inverse of concat_channels: channels [0, first_channels) and the rest.
ChannelSplit split_channels(const Tensor& x, std::size_t first_channels);

// ---------------------------------------------------------------------------
// Per-pixel softmax over the channel axis

Tensor softmax_pixels(const Tensor& x);
/// dy is the gradient w.r.t. the softmax output y.
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

}  // namespace resseg::layers
