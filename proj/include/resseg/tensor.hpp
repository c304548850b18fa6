#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace resseg {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles. Image tensors use batch x channels x
/// height x width. A gradient buffer of the same shape can be attached.
class Tensor {
 public:
  Tensor() = default;
  /// Throws ShapeError on an empty shape or a zero dimension.
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// 4-d accessors; no bounds checks beyond the debug assert.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept;
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept;

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zeroed gradient buffer when absent.
  void ensure_grad();
  void zero_grad();
  void drop_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }
  /// Gradient buffer copied into a standalone tensor.
  Tensor grad_tensor() const;

  void fill(double value) noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  /// Exact element and shape equality; gradient buffers are ignored.
  bool equals(const Tensor& other) const noexcept;
  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

std::size_t shape_volume(const Shape& shape);

Tensor tensor_new(const Shape& shape, double fill);

/// SplitMix64 stream. Normal draws use the cosine branch of Box-Muller and
/// consume two uniforms each, so the stream depends only on the call sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::size_t below(std::size_t n) noexcept;
  double normal() noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

/// In-place Fisher-Yates driven by Rng, identical on every platform.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

/// i.i.d. N(0, 2/fan_in) draws.
Tensor he_init(const Shape& shape, std::size_t fan_in, Rng& rng);

/// Uniform [lo, hi) draws; test and tooling helper.
Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng);

using ScalarFunction = std::function<double(const Tensor&)>;

/// Central-difference gradient of f at x. Throws NumericError if f is not
/// finite at a probe point.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double eps);

/// Same as finite_diff_grad but only probes the listed flat indices; other
/// entries of the result are zero.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double eps,
                        std::span<const std::size_t> indices);

/// Largest elementwise |a - b| / max(|a|, |b|, floor) over two equally shaped
/// buffers. Throws ShapeError on a length mismatch.
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8);

double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace resseg
