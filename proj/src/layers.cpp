#include "resseg/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "resseg/errors.hpp"

namespace resseg::layers {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected a 4-d tensor, got " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

struct Geometry {
  std::size_t batch, channels, height, width;
  std::size_t plane() const { return height * width; }
  std::size_t sample() const { return channels * height * width; }
};

Geometry geometry(const Tensor& t) {
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Rows are (c, u, v) kernel taps, columns are output pixels.
void im2col(const double* plane, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = plane + c * h * w;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - pad;
        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pad;
        for (std::ptrdiff_t i = 0; i < H; ++i) {
          const std::ptrdiff_t si = i + du;
          double* row = col + i * W;
          if (si < 0 || si >= H) {
            std::fill(row, row + W, 0.0);
            continue;
          }
          for (std::ptrdiff_t j = 0; j < W; ++j) {
            const std::ptrdiff_t sj = j + dv;
            row[j] = (sj < 0 || sj >= W) ? 0.0 : src[si * W + sj];
          }
        }
        col += h * w;
      }
    }
  }
}

// Scatter-adds columns back onto the image plane; adjoint of im2col.
void col2im(const double* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            double* plane) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    double* dst = plane + c * h * w;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - pad;
        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pad;
        for (std::ptrdiff_t i = 0; i < H; ++i) {
          const std::ptrdiff_t si = i + du;
          if (si < 0 || si >= H) continue;
          const double* row = col + i * W;
          for (std::ptrdiff_t j = 0; j < W; ++j) {
            const std::ptrdiff_t sj = j + dv;
            if (sj >= 0 && sj < W) dst[si * W + sj] += row[j];
          }
        }
        col += h * w;
      }
    }
  }
}

std::size_t check_kernel(const Tensor& w, const char* what) {
  require_rank4(w, what);
  const std::size_t k = w.dim(2);
  if (w.dim(3) != k || k % 2 == 0) {
    throw ShapeError(std::string(what) + ": kernel must be square with odd size, got " +
                     shape_to_string(w.shape()));
  }
  return k;
}

void check_bias(const Tensor& b, std::size_t channels, const char* what) {
  if (b.rank() != 1 || b.dim(0) != channels) {
    throw ShapeError(std::string(what) + ": bias must have shape [" + std::to_string(channels) +
                     "], got " + shape_to_string(b.shape()));
  }
}

void add_bias(Tensor& y, const Tensor& b) {
  const auto g = geometry(y);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < g.channels; ++c) {
      double* p = y.raw() + (n * g.channels + c) * g.plane();
      const double bias = b[c];
      for (std::size_t i = 0; i < g.plane(); ++i) p[i] += bias;
    }
  }
}

Tensor bias_grad(const Tensor& dy) {
  const auto g = geometry(dy);
  Tensor db({g.channels}, 0.0);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < g.channels; ++c) {
      const double* p = dy.raw() + (n * g.channels + c) * g.plane();
      double s = 0.0;
      for (std::size_t i = 0; i < g.plane(); ++i) s += p[i];
      db[c] += s;
    }
  }
  return db;
}

// out (rows x HW) = weights (rows x taps) * im2col(x) where x has `in_channels`.
// Shared by conv2d forward and the data gradient of deconv.
void correlate(const Tensor& x, const double* weights, std::size_t rows, std::size_t k,
               Tensor& out) {
  const auto g = geometry(x);
  const std::size_t taps = g.channels * k * k;
  ConstMatrixMap wmat(weights, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(taps));
  std::vector<double> col(k == 1 ? 0 : taps * g.plane());
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xs = x.raw() + n * g.sample();
    const double* cols = xs;
    if (k != 1) {
      im2col(xs, g.channels, g.height, g.width, k, col.data());
      cols = col.data();
    }
    ConstMatrixMap cmat(cols, static_cast<Eigen::Index>(taps),
                        static_cast<Eigen::Index>(g.plane()));
    MatrixMap ymat(out.raw() + n * rows * g.plane(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(g.plane()));
    ymat.noalias() = wmat * cmat;
  }
}

// out (channels_out x HW) = col2im(weights^T (taps x rows) * x) where x has
// `rows` channels. Shared by deconv forward and the data gradient of conv2d.
void scatter(const Tensor& x, const double* weights, std::size_t channels_out, std::size_t k,
             Tensor& out) {
  const auto g = geometry(x);
  const std::size_t taps = channels_out * k * k;
  ConstMatrixMap wmat(weights, static_cast<Eigen::Index>(g.channels),
                      static_cast<Eigen::Index>(taps));
  RowMatrix col(static_cast<Eigen::Index>(taps), static_cast<Eigen::Index>(g.plane()));
  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMatrixMap xmat(x.raw() + n * g.sample(), static_cast<Eigen::Index>(g.channels),
                        static_cast<Eigen::Index>(g.plane()));
    double* dst = out.raw() + n * channels_out * g.plane();
    if (k == 1) {
      MatrixMap omat(dst, static_cast<Eigen::Index>(channels_out),
                     static_cast<Eigen::Index>(g.plane()));
      omat.noalias() += wmat.transpose() * xmat;
      continue;
    }
    col.noalias() = wmat.transpose() * xmat;
    col2im(col.data(), channels_out, g.height, g.width, k, dst);
  }
}

// dW (rows x taps) += a (rows x HW) * im2col(b)^T, summed over the batch in order.
void kernel_grad(const Tensor& a, const Tensor& b, std::size_t k, double* dw) {
  const auto ga = geometry(a);
  const auto gb = geometry(b);
  const std::size_t taps = gb.channels * k * k;
  MatrixMap dmat(dw, static_cast<Eigen::Index>(ga.channels), static_cast<Eigen::Index>(taps));
  std::vector<double> col(k == 1 ? 0 : taps * gb.plane());
  for (std::size_t n = 0; n < ga.batch; ++n) {
    const double* bs = b.raw() + n * gb.sample();
    const double* cols = bs;
    if (k != 1) {
      im2col(bs, gb.channels, gb.height, gb.width, k, col.data());
      cols = col.data();
    }
    ConstMatrixMap amat(a.raw() + n * ga.sample(), static_cast<Eigen::Index>(ga.channels),
                        static_cast<Eigen::Index>(ga.plane()));
    ConstMatrixMap cmat(cols, static_cast<Eigen::Index>(taps),
                        static_cast<Eigen::Index>(gb.plane()));
    dmat.noalias() += amat * cmat.transpose();
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank4(x, "conv2d");
  const std::size_t k = check_kernel(w, "conv2d");
  const auto g = geometry(x);
  if (w.dim(1) != g.channels) {
    throw ShapeError("conv2d: input has " + std::to_string(g.channels) +
                     " channels but kernel expects " + std::to_string(w.dim(1)));
  }
  const std::size_t cout = w.dim(0);
  check_bias(b, cout, "conv2d");
  Tensor y({g.batch, cout, g.height, g.width});
  correlate(x, w.raw(), cout, k, y);
  add_bias(y, b);
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const std::size_t k = check_kernel(w, "conv2d_backward");
  const auto g = geometry(x);
  if (dy.rank() != 4 || dy.dim(0) != g.batch || dy.dim(1) != w.dim(0) ||
      dy.dim(2) != g.height || dy.dim(3) != g.width) {
    throw ShapeError("conv2d_backward: upstream gradient shape " + shape_to_string(dy.shape()));
  }
  ConvGrads out{Tensor(x.shape(), 0.0), Tensor(w.shape(), 0.0), bias_grad(dy)};
  scatter(dy, w.raw(), g.channels, k, out.dx);
  kernel_grad(dy, x, k, out.dw.raw());
  return out;
}

Tensor deconv(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank4(x, "deconv");
  const std::size_t k = check_kernel(w, "deconv");
  const auto g = geometry(x);
  if (w.dim(0) != g.channels) {
    throw ShapeError("deconv: input has " + std::to_string(g.channels) +
                     " channels but kernel expects " + std::to_string(w.dim(0)));
  }
  const std::size_t cout = w.dim(1);
  check_bias(b, cout, "deconv");
  Tensor y({g.batch, cout, g.height, g.width}, 0.0);
  scatter(x, w.raw(), cout, k, y);
  add_bias(y, b);
  return y;
}

ConvGrads deconv_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const std::size_t k = check_kernel(w, "deconv_backward");
  const auto g = geometry(x);
  if (dy.rank() != 4 || dy.dim(0) != g.batch || dy.dim(1) != w.dim(1) ||
      dy.dim(2) != g.height || dy.dim(3) != g.width) {
    throw ShapeError("deconv_backward: upstream gradient shape " + shape_to_string(dy.shape()));
  }
  ConvGrads out{Tensor(x.shape()), Tensor(w.shape(), 0.0), bias_grad(dy)};
  correlate(dy, w.raw(), g.channels, k, out.dx);
  kernel_grad(x, dy, k, out.dw.raw());
  return out;
}

Tensor deconv_kernel_as_conv(const Tensor& w) {
  const std::size_t k = check_kernel(w, "deconv_kernel_as_conv");
  const std::size_t cin = w.dim(0);
  const std::size_t cout = w.dim(1);
  Tensor out({cout, cin, k, k});
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v)
          out.at(o, c, k - 1 - u, k - 1 - v) = w.at(c, o, u, v);
  return out;
}

BatchNormState BatchNormState::identity(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor({channels}, 1.0);
  s.beta = Tensor({channels}, 0.0);
  s.running_mean = Tensor({channels}, 0.0);
  s.running_var = Tensor({channels}, 1.0);
  return s;
}

BatchNormResult batchnorm(const Tensor& x, BatchNormState& state, bool training) {
  require_rank4(x, "batchnorm");
  const auto g = geometry(x);
  for (const Tensor* t : {&state.gamma, &state.beta, &state.running_mean, &state.running_var}) {
    if (t->rank() != 1 || t->dim(0) != g.channels) {
      throw ShapeError("batchnorm: state does not match " + std::to_string(g.channels) +
                       " channels");
    }
  }
  const std::size_t count = g.batch * g.plane();
  if (training && count < 2) {
    throw DegenerateInputError("batchnorm: training mode needs at least 2 elements per channel");
  }

  BatchNormResult r{Tensor(x.shape()), {Tensor(x.shape()), std::vector<double>(g.channels), training}};
  for (std::size_t c = 0; c < g.channels; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* p = x.raw() + (n * g.channels + c) * g.plane();
        for (std::size_t i = 0; i < g.plane(); ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* p = x.raw() + (n * g.channels + c) * g.plane();
        for (std::size_t i = 0; i < g.plane(); ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= static_cast<double>(count);
      const double m = state.stat_momentum;
      state.running_mean[c] = m * state.running_mean[c] + (1.0 - m) * mean;
      state.running_var[c] = m * state.running_var[c] + (1.0 - m) * var;
    } else {
      mean = state.running_mean[c];
      var = std::max(state.running_var[c], 0.0);
    }
    const double inv_std = 1.0 / std::sqrt(var + state.epsilon);
    r.cache.inv_std[c] = inv_std;
    const double gamma = state.gamma[c];
    const double beta = state.beta[c];
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t off = (n * g.channels + c) * g.plane();
      for (std::size_t i = 0; i < g.plane(); ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        r.cache.x_hat[off + i] = xh;
        r.y[off + i] = gamma * xh + beta;
      }
    }
  }
  return r;
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormState& state,
                                  const Tensor& dy) {
  require_same_shape(cache.x_hat, dy, "batchnorm_backward");
  const auto g = geometry(dy);
  const auto count = static_cast<double>(g.batch * g.plane());
  BatchNormGrads out{Tensor(dy.shape()), Tensor({g.channels}, 0.0), Tensor({g.channels}, 0.0)};
  for (std::size_t c = 0; c < g.channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t off = (n * g.channels + c) * g.plane();
      for (std::size_t i = 0; i < g.plane(); ++i) {
        sum_dy += dy[off + i];
        sum_dy_xh += dy[off + i] * cache.x_hat[off + i];
      }
    }
    out.dbeta[c] = sum_dy;
    out.dgamma[c] = sum_dy_xh;
    const double gamma = state.gamma[c];
    const double inv_std = cache.inv_std[c];
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t off = (n * g.channels + c) * g.plane();
      for (std::size_t i = 0; i < g.plane(); ++i) {
        if (cache.training) {
          out.dx[off + i] = gamma * inv_std / count *
                            (count * dy[off + i] - sum_dy - cache.x_hat[off + i] * sum_dy_xh);
        } else {
          out.dx[off + i] = gamma * inv_std * dy[off + i];
        }
      }
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  y.drop_grad();
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "relu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor fuse_add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "fuse_add");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

PoolResult maxpool2(const Tensor& x) {
  require_rank4(x, "maxpool2");
  const auto g = geometry(x);
  if (g.height % 2 != 0 || g.width % 2 != 0) {
    throw ShapeError("maxpool2: height and width must be even, got " + shape_to_string(x.shape()));
  }
  const std::size_t oh = g.height / 2;
  const std::size_t ow = g.width / 2;
  PoolResult r{Tensor({g.batch, g.channels, oh, ow}),
               {{g.batch, g.channels, oh, ow}, g.height, g.width, {}}};
  r.indices.argmax.resize(r.y.size());
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < g.batch * g.channels; ++plane) {
    const double* src = x.raw() + plane * g.plane();
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++k) {
        std::size_t best = (2 * i) * g.width + 2 * j;
        for (std::size_t pos : {best + 1, best + g.width, best + g.width + 1}) {
          if (src[pos] > src[best]) best = pos;
        }
        r.y[k] = src[best];
        r.indices.argmax[k] = best;
      }
    }
  }
  return r;
}

Tensor maxpool2_backward(const Tensor& dy, const PoolIndices& idx) {
  if (dy.shape() != idx.pooled_shape) {
    throw IndexError("maxpool2_backward: gradient shape " + shape_to_string(dy.shape()) +
                     " does not match pooled shape " + shape_to_string(idx.pooled_shape));
  }
  return maxunpool2(dy, idx, idx.source_height, idx.source_width);
}

Tensor maxunpool2(const Tensor& y, const PoolIndices& idx, std::size_t out_h, std::size_t out_w) {
  require_rank4(y, "maxunpool2");
  if (y.shape() != idx.pooled_shape || idx.argmax.size() != y.size()) {
    throw IndexError("maxunpool2: input shape " + shape_to_string(y.shape()) +
                     " does not match recorded pooled shape " + shape_to_string(idx.pooled_shape));
  }
  const auto g = geometry(y);
  if (out_h != 2 * g.height || out_w != 2 * g.width || out_h != idx.source_height ||
      out_w != idx.source_width) {
    throw IndexError("maxunpool2: output size must be twice the pooled size");
  }
  Tensor out({g.batch, g.channels, out_h, out_w}, 0.0);
  const std::size_t out_plane = out_h * out_w;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const std::size_t plane = k / g.plane();
    out[plane * out_plane + idx.argmax[k]] = y[k];
  }
  return out;
}

Tensor maxunpool2_backward(const Tensor& dout, const PoolIndices& idx) {
  if (dout.rank() != 4 || dout.dim(2) != idx.source_height || dout.dim(3) != idx.source_width ||
      dout.dim(0) != idx.pooled_shape[0] || dout.dim(1) != idx.pooled_shape[1]) {
    throw IndexError("maxunpool2_backward: gradient shape " + shape_to_string(dout.shape()) +
                     " does not match recorded indices");
  }
  Tensor dy(idx.pooled_shape);
  const std::size_t pooled_plane = idx.pooled_shape[2] * idx.pooled_shape[3];
  const std::size_t out_plane = idx.source_height * idx.source_width;
  for (std::size_t k = 0; k < dy.size(); ++k) {
    dy[k] = dout[(k / pooled_plane) * out_plane + idx.argmax[k]];
  }
  return dy;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  const auto ga = geometry(a);
  const auto gb = geometry(b);
  if (ga.batch != gb.batch || ga.height != gb.height || ga.width != gb.width) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  Tensor y({ga.batch, ga.channels + gb.channels, ga.height, ga.width});
  double* dst = y.raw();
  for (std::size_t n = 0; n < ga.batch; ++n) {
    dst = std::copy_n(a.raw() + n * ga.sample(), ga.sample(), dst);
    dst = std::copy_n(b.raw() + n * gb.sample(), gb.sample(), dst);
  }
  return y;
}

ChannelSplit split_channels(const Tensor& x, std::size_t first_channels) {
  require_rank4(x, "split_channels");
  const auto g = geometry(x);
  if (first_channels == 0 || first_channels >= g.channels) {
    throw ShapeError("split_channels: split point must leave both parts non-empty");
  }
  const std::size_t second_channels = g.channels - first_channels;
  ChannelSplit s{Tensor({g.batch, first_channels, g.height, g.width}),
                 Tensor({g.batch, second_channels, g.height, g.width})};
  const std::size_t first_len = first_channels * g.plane();
  const std::size_t second_len = second_channels * g.plane();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* src = x.raw() + n * g.sample();
    std::copy_n(src, first_len, s.first.raw() + n * first_len);
    std::copy_n(src + first_len, second_len, s.second.raw() + n * second_len);
  }
  return s;
}

Tensor softmax_pixels(const Tensor& x) {
  require_rank4(x, "softmax_pixels");
  const auto g = geometry(x);
  if (g.channels < 2) throw ShapeError("softmax_pixels: need at least 2 channels");
  Tensor y(x.shape());
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* src = x.raw() + n * g.sample();
    double* dst = y.raw() + n * g.sample();
    for (std::size_t p = 0; p < g.plane(); ++p) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < g.channels; ++c) peak = std::max(peak, src[c * g.plane() + p]);
      double total = 0.0;
      for (std::size_t c = 0; c < g.channels; ++c) {
        const double e = std::exp(src[c * g.plane() + p] - peak);
        dst[c * g.plane() + p] = e;
        total += e;
      }
      for (std::size_t c = 0; c < g.channels; ++c) dst[c * g.plane() + p] /= total;
    }
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_backward");
  const auto g = geometry(y);
  Tensor dx(y.shape());
  for (std::size_t n = 0; n < g.batch; ++n) {
    const std::size_t base = n * g.sample();
    for (std::size_t p = 0; p < g.plane(); ++p) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.channels; ++c) {
        const std::size_t i = base + c * g.plane() + p;
        dot += y[i] * dy[i];
      }
      for (std::size_t c = 0; c < g.channels; ++c) {
        const std::size_t i = base + c * g.plane() + p;
        dx[i] = y[i] * (dy[i] - dot);
      }
    }
  }
  return dx;
}

}  // namespace resseg::layers
