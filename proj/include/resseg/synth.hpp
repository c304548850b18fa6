#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "resseg/data_io.hpp"

namespace resseg {

enum class ShapeKind { rectangle, disk, triangle };

struct SynthConfig {
  std::size_t count = 100;
  std::size_t size = 64;
  std::size_t class_count = 2;
  /// Target fraction of foreground pixels per image.
  double foreground_rate = 0.2;
  std::vector<ShapeKind> shapes{ShapeKind::rectangle, ShapeKind::disk, ShapeKind::triangle};
  /// Half-width of the uniform per-pixel texture noise.
  double noise = 0.15;
  /// Each image gets at least this many shapes when the target area allows it.
  std::size_t min_shapes = 1;
  std::uint64_t seed = 0;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

/// Class 0 is a noisy background; classes 1..C-1 are rasterized rectangles,
/// disks, and triangles, each class with its own mean color. Labels are the
/// exact rasterization. Deterministic in cfg.seed.
Dataset generate_synthetic(const SynthConfig& cfg);

/// Fraction of non-zero, non-ignored label pixels over a dataset.
double foreground_fraction(const Dataset& data);

}  // namespace resseg
