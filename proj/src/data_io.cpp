#include "resseg/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "resseg/errors.hpp"

namespace resseg {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

namespace {

struct NetpbmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_netpbm(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
    throw FormatError(std::string("netpbm: expected magic ") + magic);
  }
  std::size_t pos = 2;
  auto next_number = [&]() -> std::size_t {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw FormatError("netpbm: malformed header");
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw FormatError("netpbm: header value too large");
      ++pos;
    }
    return v;
  };
  NetpbmHeader h;
  h.width = next_number();
  h.height = next_number();
  const std::size_t maxval = next_number();
  if (h.width == 0 || h.height == 0) throw FormatError("netpbm: zero image dimension");
  if (maxval != 255) throw FormatError("netpbm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("netpbm: missing separator after header");
  }
  h.data_offset = pos + 1;
  return h;
}

std::string netpbm_header(const char* magic, std::size_t w, std::size_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

std::uint8_t quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(clamped * 255.0 + 0.5));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

constexpr char kCheckpointMagic[4] = {'S', 'E', 'G', 'R'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

}  // namespace

Tensor decode_ppm(const std::string& bytes) {
  const auto h = parse_netpbm(bytes, "P6");
  const std::size_t plane = h.width * h.height;
  if (bytes.size() < h.data_offset + 3 * plane) throw FormatError("ppm: truncated pixel data");
  Tensor img({3, h.height, h.width});
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) img[c * plane + p] = px[3 * p + c] / 255.0;
  }
  return img;
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("ppm: image must be 3 x H x W, got " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::string out = netpbm_header("P6", w, h);
  const std::size_t plane = h * w;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize(image[c * plane + p])));
  }
  return out;
}

Tensor load_image_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }

void save_image_ppm(const fs::path& path, const Tensor& image) { write_file(path, encode_ppm(image)); }

LabelMap decode_pgm(const std::string& bytes) {
  const auto h = parse_netpbm(bytes, "P5");
  if (bytes.size() < h.data_offset + h.width * h.height) throw FormatError("pgm: truncated pixel data");
  LabelMap labels(1, h.height, h.width);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (std::size_t i = 0; i < labels.size(); ++i) labels.ids[i] = px[i];
  return labels;
}

std::string encode_pgm(const LabelMap& labels) {
  if (labels.batch != 1) throw ShapeError("pgm: expected a single label map");
  std::string out = netpbm_header("P5", labels.width, labels.height);
  for (int id : labels.ids) {
    if (id < 0 || id > 255) throw LabelError("pgm: label " + std::to_string(id) + " does not fit a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

LabelMap load_labels_pgm(const fs::path& path) { return decode_pgm(read_file(path)); }

void save_labels_pgm(const fs::path& path, const LabelMap& labels) { write_file(path, encode_pgm(labels)); }

std::string encode_checkpoint(const Network& net) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const auto& params = net.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    const auto& shape = p.tensor->shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor->data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

std::vector<CheckpointTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic");
  }
  Reader r(bytes);
  r.take(4);
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<CheckpointTensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    CheckpointTensor ct;
    ct.name = r.take(r.u32());
    const std::uint32_t ndim = r.u32();
    if (ndim == 0 || ndim > 8) throw CheckpointError("checkpoint: bad rank for '" + ct.name + "'");
    std::size_t volume = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      ct.dims.push_back(r.u32());
      if (ct.dims.back() == 0) throw CheckpointError("checkpoint: zero dimension in '" + ct.name + "'");
      volume *= ct.dims.back();
      if (volume > bytes.size()) throw CheckpointError("checkpoint: truncated data");
    }
    ct.values.resize(volume);
    for (auto& v : ct.values) v = r.f32();
    tensors.push_back(std::move(ct));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return tensors;
}

void save_checkpoint(const Network& net, const fs::path& path) {
  write_file(path, encode_checkpoint(net));
}

namespace {

const CheckpointTensor& find_tensor(const std::vector<CheckpointTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw CheckpointError("checkpoint: missing tensor '" + name + "'");
}

Network load_into(const std::vector<CheckpointTensor>& tensors, const ArchConfig& cfg) {
  Rng rng(0);
  Network net = build_network(cfg, rng);
  auto& params = net.parameters();
  if (params.size() != tensors.size()) {
    throw CheckpointError("checkpoint: holds " + std::to_string(tensors.size()) +
                          " tensors, architecture expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = tensors[i];
    auto& dst = *params[i].tensor;
    if (src.name != params[i].name) {
      throw CheckpointError("checkpoint: expected tensor '" + params[i].name + "', found '" + src.name + "'");
    }
    if (src.dims.size() != dst.rank() ||
        !std::equal(src.dims.begin(), src.dims.end(), dst.shape().begin())) {
      throw CheckpointError("checkpoint: dimension mismatch for '" + src.name + "'");
    }
    for (std::size_t k = 0; k < src.values.size(); ++k) dst[k] = static_cast<double>(src.values[k]);
  }
  return net;
}

}  // namespace

Network load_checkpoint(const fs::path& path, const ArchConfig& cfg) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const FormatError& e) {
    throw CheckpointError(e.what());
  }
  return load_into(decode_checkpoint(bytes), cfg);
}

ArchConfig infer_arch_config(const std::vector<CheckpointTensor>& tensors) {
  const auto& e1 = find_tensor(tensors, "enc1.conv0.weight");
  const auto& e2 = find_tensor(tensors, "enc2.conv0.weight");
  const auto& e3 = find_tensor(tensors, "enc3.conv0.weight");
  const auto& cls = find_tensor(tensors, "classifier.weight");
  if (e1.dims.size() != 4 || e2.dims.size() != 4 || e3.dims.size() != 4 || cls.dims.size() != 4) {
    throw CheckpointError("checkpoint: convolution kernels must be 4-d");
  }
  ArchConfig cfg;
  cfg.input_channels = e1.dims[1];
  cfg.c1 = e1.dims[0];
  cfg.c2 = e2.dims[0];
  cfg.c3 = e3.dims[0];
  cfg.kernel = e1.dims[2];
  cfg.class_count = cls.dims[0];
  if (cls.dims[1] == 2 * cfg.c1) {
    cfg.arch = Architecture::improved;
  } else if (cls.dims[1] == cfg.c1) {
    cfg.arch = Architecture::baseline;
  } else {
    throw CheckpointError("checkpoint: classifier width matches neither architecture");
  }
  cfg.convs_per_stage = 0;
  for (const auto& t : tensors) {
    if (t.name.rfind("enc1.conv", 0) == 0 && t.name.ends_with(".weight")) ++cfg.convs_per_stage;
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return cfg;
}

Network load_checkpoint(const fs::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const FormatError& e) {
    throw CheckpointError(e.what());
  }
  const auto tensors = decode_checkpoint(bytes);
  return load_into(tensors, infer_arch_config(tensors));
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  for (std::size_t i = 0; i < data.size(); ++i) {
    save_image_ppm(dir / "images" / (index_name(i) + ".ppm"), data.samples[i].image);
    save_labels_pgm(dir / "labels" / (index_name(i) + ".pgm"), data.samples[i].labels);
  }
  write_file(dir / "meta.txt", "class_count = " + std::to_string(data.class_count) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  bool have_classes = false;
  std::istringstream meta(read_file(dir / "meta.txt"));
  for (std::string line; std::getline(meta, line);) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw FormatError("meta.txt: expected key = value, got '" + line + "'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "class_count") {
      try {
        data.class_count = std::stoul(value);
      } catch (const std::exception&) {
        throw FormatError("meta.txt: bad class_count '" + value + "'");
      }
      have_classes = true;
    }
  }
  if (!have_classes || data.class_count < 2) throw FormatError("meta.txt: missing or invalid class_count");

  for (std::size_t i = 0;; ++i) {
    const fs::path img = dir / "images" / (index_name(i) + ".ppm");
    if (!fs::exists(img)) break;
    Sample s{load_image_ppm(img), load_labels_pgm(dir / "labels" / (index_name(i) + ".pgm"))};
    if (s.labels.height != s.image.dim(1) || s.labels.width != s.image.dim(2)) {
      throw FormatError("dataset: image and label sizes differ for sample " + index_name(i));
    }
    data.samples.push_back(std::move(s));
  }
  if (data.empty()) throw FormatError("dataset: no samples under '" + dir.string() + "'");
  return data;
}

DatasetSplit split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DegenerateInputError("split: train fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
  if (n_train == 0 || n_train >= data.size()) {
    throw DegenerateInputError("split: fraction leaves one part empty");
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);
  DatasetSplit out{{data.class_count, {}}, {data.class_count, {}}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.train : out.validation).samples.push_back(data.samples[order[i]]);
  }
  return out;
}

Palette default_palette(std::size_t classes) {
  static constexpr Color kBase[] = {
      {128, 128, 128}, {220, 40, 40},  {40, 180, 60},  {50, 90, 220},  {230, 200, 40},
      {200, 60, 200},  {40, 200, 200}, {250, 140, 30}, {120, 60, 20},  {160, 220, 120},
  };
  Palette p;
  for (std::size_t c = 0; c < classes; ++c) {
    if (c < std::size(kBase)) {
      p.push_back(kBase[c]);
    } else {
      // Deterministic spread for larger class counts.
      const auto h = static_cast<std::uint32_t>(c * 2654435761u);
      p.push_back({static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8),
                   static_cast<std::uint8_t>(h >> 16)});
    }
  }
  return p;
}

Tensor colorize_labels(const LabelMap& labels, const Palette& palette, int ignore_id) {
  if (labels.batch != 1) throw ShapeError("colorize: expected a single label map");
  Tensor img({3, labels.height, labels.width}, 0.0);
  const std::size_t plane = labels.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    const int id = labels.ids[p];
    if (id == ignore_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= palette.size()) {
      throw PaletteError("colorize: no palette entry for class " + std::to_string(id));
    }
    for (std::size_t c = 0; c < 3; ++c) img[c * plane + p] = palette[static_cast<std::size_t>(id)][c] / 255.0;
  }
  return img;
}

}  // namespace resseg
