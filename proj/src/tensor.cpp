#include "resseg/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <sstream>

#include "resseg/errors.hpp"

namespace resseg {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_volume(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: empty dimension list");
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw ShapeError("invalid shape: zero dimension in " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_volume(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
  assert(shape_.size() == 4);
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
  assert(shape_.size() == 4);
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

void Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() {
  grad_.assign(data_.size(), 0.0);
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor(shape_, 0.0);
  return Tensor(shape_, grad_);
}

void Tensor::fill(double value) noexcept {
  std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::equals(const Tensor& other) const noexcept {
  return shape_ == other.shape_ && data_ == other.data_;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor tensor_new(const Shape& shape, double fill) {
  return Tensor(shape, fill);
}

std::uint64_t Rng::next_u64() noexcept {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) noexcept {
  assert(n > 0);
  return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

double Rng::normal() noexcept {
  // 1 - u lies in (0, 1], keeping the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor he_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ShapeError("he_init: fan_in must be positive");
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = stddev * rng.normal();
  return t;
}

Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

namespace {

double central_difference(const ScalarFunction& f, Tensor& probe, std::size_t i, double eps) {
  const double saved = probe[i];
  probe[i] = saved + eps;
  const double up = f(probe);
  probe[i] = saved - eps;
  const double down = f(probe);
  probe[i] = saved;
  if (!std::isfinite(up) || !std::isfinite(down)) {
    throw NumericError("finite_diff_grad: non-finite function value at index " + std::to_string(i));
  }
  return (up - down) / (2.0 * eps);
}

}  // namespace

Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw NumericError("finite_diff_grad: eps must be positive");
  Tensor probe = x;
  Tensor g(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = central_difference(f, probe, i, eps);
  return g;
}

Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double eps,
                        std::span<const std::size_t> indices) {
  if (!(eps > 0.0)) throw NumericError("finite_diff_grad: eps must be positive");
  Tensor probe = x;
  Tensor g(x.shape(), 0.0);
  for (auto i : indices) {
    if (i >= x.size()) throw IndexError("finite_diff_grad: probe index out of range");
    g[i] = central_difference(f, probe, i, eps);
  }
  return g;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace resseg
