#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resseg/loss.hpp"
#include "resseg/model.hpp"
#include "resseg/tensor.hpp"

namespace resseg {

/// image: 3 x H x W in [0, 1]; labels: a 1 x H x W map.
struct Sample {
  Tensor image;
  LabelMap labels;
};

struct Dataset {
  std::size_t class_count = 2;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset validation;
};

// Netpbm. Images are binary P6 with maxval 255, label maps binary P5.

Tensor load_image_ppm(const std::filesystem::path& path);
/// Values are clamped to [0, 1] and rounded half up to the 1/255 grid.
void save_image_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor decode_ppm(const std::string& bytes);
std::string encode_ppm(const Tensor& image);

LabelMap load_labels_pgm(const std::filesystem::path& path);
void save_labels_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap decode_pgm(const std::string& bytes);
std::string encode_pgm(const LabelMap& labels);

// Checkpoints: "SEGR", u32 version 1, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 ndim, u32 dims, fp32 data. Little-endian.

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

std::string encode_checkpoint(const Network& net);
std::vector<CheckpointTensor> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
/// Builds the network described by cfg and loads every tensor into it.
/// Throws CheckpointError on a bad header or any name/shape mismatch.
Network load_checkpoint(const std::filesystem::path& path, const ArchConfig& cfg);
/// Reconstructs the architecture (arch, widths, classes, depth) from the
/// tensor names and shapes stored in a checkpoint.
ArchConfig infer_arch_config(const std::vector<CheckpointTensor>& tensors);
Network load_checkpoint(const std::filesystem::path& path);

// Dataset directories: images/NNNN.ppm, labels/NNNN.pgm, meta.txt.

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Seeded shuffle, then the first round(fraction * n) samples go to train.
DatasetSplit split(const Dataset& data, double train_fraction, std::uint64_t seed);

using Color = std::array<std::uint8_t, 3>;
using Palette = std::vector<Color>;

Palette default_palette(std::size_t classes);

/// 1 x H x W label map to a 3 x H x W image in [0, 1]; ignore pixels are black.
Tensor colorize_labels(const LabelMap& labels, const Palette& palette, int ignore_id = kIgnoreId);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace resseg
