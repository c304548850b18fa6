#include "resseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "resseg/errors.hpp"

namespace resseg {

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synth: count must be at least 1");
  if (size < 8 || size % 8 != 0) throw ConfigError("synth: size must be a positive multiple of 8");
  if (class_count < 2 || class_count > 255) throw ConfigError("synth: class_count must lie in [2, 255]");
  if (!(foreground_rate > 0.0 && foreground_rate < 1.0)) {
    throw ConfigError("synth: foreground_rate must lie in (0, 1)");
  }
  if (shapes.empty()) throw ConfigError("synth: at least one shape kind is required");
  if (!(noise >= 0.0 && noise <= 0.5)) throw ConfigError("synth: noise must lie in [0, 0.5]");
  if (min_shapes < 1) throw ConfigError("synth: min_shapes must be at least 1");
}

namespace {

using Rgb = std::array<double, 3>;

Rgb class_color(std::size_t c) {
  static constexpr Rgb kColors[] = {
      {0.85, 0.25, 0.20}, {0.20, 0.70, 0.30}, {0.25, 0.35, 0.85},
      {0.90, 0.80, 0.20}, {0.75, 0.25, 0.75}, {0.20, 0.80, 0.80},
  };
  if (c - 1 < std::size(kColors)) return kColors[c - 1];
  const auto h = static_cast<std::uint32_t>(c * 2654435761u);
  return {(h & 0xFF) / 255.0, ((h >> 8) & 0xFF) / 255.0, ((h >> 16) & 0xFF) / 255.0};
}

constexpr double kMinShapeArea = 4.0;

struct Canvas {
  std::size_t size;
  LabelMap labels;
  std::vector<std::uint8_t> mask;  // pixels covered by the shape being drawn

  explicit Canvas(std::size_t s) : size(s), labels(1, s, s, 0), mask(s * s, 0) {}
};

void raster_rectangle(Canvas& cv, double area, Rng& rng) {
  const double s = static_cast<double>(cv.size);
  const double aspect = rng.uniform(0.5, 2.0);
  const double w = std::clamp(std::round(std::sqrt(area * aspect)), 2.0, s);
  const double h = std::clamp(std::round(area / w), 2.0, s);
  const auto x0 = static_cast<std::size_t>(rng.below(cv.size - static_cast<std::size_t>(w) + 1));
  const auto y0 = static_cast<std::size_t>(rng.below(cv.size - static_cast<std::size_t>(h) + 1));
  for (std::size_t i = y0; i < y0 + static_cast<std::size_t>(h); ++i)
    for (std::size_t j = x0; j < x0 + static_cast<std::size_t>(w); ++j) cv.mask[i * cv.size + j] = 1;
}

void raster_disk(Canvas& cv, double area, Rng& rng) {
  const double s = static_cast<double>(cv.size);
  const double r = std::clamp(std::sqrt(area / std::numbers::pi), 1.2, s / 2.0);
  const double cx = rng.uniform(r, s - r);
  const double cy = rng.uniform(r, s - r);
  for (std::size_t i = 0; i < cv.size; ++i) {
    for (std::size_t j = 0; j < cv.size; ++j) {
      const double dy = static_cast<double>(i) + 0.5 - cy;
      const double dx = static_cast<double>(j) + 0.5 - cx;
      if (dx * dx + dy * dy <= r * r) cv.mask[i * cv.size + j] = 1;
    }
  }
}

void raster_triangle(Canvas& cv, double area, Rng& rng) {
  const double s = static_cast<double>(cv.size);
  const double side = std::clamp(std::sqrt(2.0 * area), 3.0, s);
  const double ox = rng.uniform(0.0, s - side);
  const double oy = rng.uniform(0.0, s - side);
  // Apex on one edge of the bounding square, base on the opposite edge.
  std::array<std::array<double, 2>, 3> v{{{ox + rng.uniform(0.0, side), oy},
                                          {ox, oy + side},
                                          {ox + side, oy + side}}};
  if (rng.uniform() < 0.5) {
    for (auto& p : v) p[1] = 2.0 * oy + side - p[1];
  }
  if (rng.uniform() < 0.5) {
    for (auto& p : v) std::swap(p[0], p[1]);
  }
  auto edge = [](const std::array<double, 2>& a, const std::array<double, 2>& b, double x, double y) {
    return (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
  };
  for (std::size_t i = 0; i < cv.size; ++i) {
    for (std::size_t j = 0; j < cv.size; ++j) {
      const double x = static_cast<double>(j) + 0.5;
      const double y = static_cast<double>(i) + 0.5;
      const double e0 = edge(v[0], v[1], x, y);
      const double e1 = edge(v[1], v[2], x, y);
      const double e2 = edge(v[2], v[0], x, y);
      const bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      if (inside) cv.mask[i * cv.size + j] = 1;
    }
  }
}

Sample generate_one(const SynthConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.size;
  const std::size_t plane = n * n;
  const double target = cfg.foreground_rate * static_cast<double>(plane);
  if (target < kMinShapeArea / 2.0) {
    throw GenerationError("synth: foreground_rate " + std::to_string(cfg.foreground_rate) +
                          " is below one shape at size " + std::to_string(n));
  }
  const double max_area = std::max(target / static_cast<double>(cfg.min_shapes), kMinShapeArea);

  Canvas cv(n);
  std::vector<std::size_t> shape_id(plane, 0);
  std::vector<Rgb> shape_colors{{0.0, 0.0, 0.0}};
  std::size_t painted = 0;
  constexpr int kMaxAttempts = 200;
  for (int attempt = 0; attempt < kMaxAttempts && static_cast<double>(painted) < target - kMinShapeArea / 2.0;
       ++attempt) {
    const double remaining = target - static_cast<double>(painted);
    const double area = std::max(kMinShapeArea, std::min(remaining, max_area) * rng.uniform(0.7, 1.3));
    const auto cls = 1 + rng.below(cfg.class_count - 1);
    std::fill(cv.mask.begin(), cv.mask.end(), 0);
    switch (cfg.shapes[rng.below(cfg.shapes.size())]) {
      case ShapeKind::rectangle: raster_rectangle(cv, area, rng); break;
      case ShapeKind::disk: raster_disk(cv, area, rng); break;
      case ShapeKind::triangle: raster_triangle(cv, area, rng); break;
    }
    // Per-shape color jitter on top of the class mean.
    Rgb color = class_color(cls);
    for (auto& ch : color) ch = std::clamp(ch + rng.uniform(-0.06, 0.06), 0.0, 1.0);
    shape_colors.push_back(color);
    for (std::size_t p = 0; p < plane; ++p) {
      if (!cv.mask[p]) continue;
      if (cv.labels.ids[p] == 0) ++painted;
      cv.labels.ids[p] = static_cast<int>(cls);
      shape_id[p] = shape_colors.size() - 1;
    }
  }
  if (static_cast<double>(painted) < 0.5 * target) {
    throw GenerationError("synth: could not reach foreground_rate " + std::to_string(cfg.foreground_rate) +
                          " within the retry budget");
  }

  const double bg = rng.uniform(0.35, 0.55);
  shape_colors[0] = {bg, bg, bg};
  Tensor img({3, n, n});
  for (std::size_t p = 0; p < plane; ++p) {
    const Rgb& base = shape_colors[shape_id[p]];
    for (std::size_t c = 0; c < 3; ++c) {
      img[c * plane + p] = std::clamp(base[c] + rng.uniform(-cfg.noise, cfg.noise), 0.0, 1.0);
    }
  }
  return {std::move(img), std::move(cv.labels)};
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Dataset data;
  data.class_count = cfg.class_count;
  data.samples.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) data.samples.push_back(generate_one(cfg, rng));
  return data;
}

double foreground_fraction(const Dataset& data) {
  std::size_t fg = 0;
  std::size_t total = 0;
  for (const auto& s : data.samples) {
    for (int id : s.labels.ids) {
      if (id == kIgnoreId) continue;
      ++total;
      if (id != 0) ++fg;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(fg) / static_cast<double>(total);
}

}  // namespace resseg
