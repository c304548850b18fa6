#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "resseg/cli.hpp"
#include "resseg/data_io.hpp"

using namespace resseg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("resseg_test_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

Result synth(const TempDir& d, const std::string& name, const std::string& size = "16",
             const std::string& classes = "2", const std::string& count = "4") {
  return run_cli({"synth", "--out", d / name, "--count", count, "--size", size, "--classes", classes,
                  "--fg-rate", "0.2", "--seed", "7"});
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"synth"}).code == 2);
  CHECK(run_cli({"gradcheck", "--layer", "nope"}).code == 2);
  CHECK(run_cli({"synth", "--out", "x", "--size", "20"}).code == 2);
  CHECK(run_cli({"synth", "--out", "x", "--fg-rate", "1.0"}).code == 2);
  CHECK(run_cli({"train", "--data", "d", "--out", "m", "--history", "h", "--loss", "bce", "--beta", "1.5"}).code == 2);
  CHECK(run_cli({"train", "--data", "d", "--out", "m", "--history", "h", "--arch", "unet"}).code == 2);
  CHECK(run_cli({"train", "--data", "d", "--out", "m", "--history", "h", "--momentum", "1"}).code == 2);
}

TEST_CASE("help exits 0") {
  const Result r = run_cli({"train", "--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("--epochs") != std::string::npos);
}

TEST_CASE("synth writes the dataset layout and is deterministic") {
  TempDir d;
  const Result r = run_cli({"synth", "--out", d / "a", "--count", "10", "--size", "32", "--classes", "2",
                            "--fg-rate", "0.05", "--seed", "7"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("foreground fraction") != std::string::npos);
  CHECK(read_file(d / "a/meta.txt") == "class_count = 2\n");
  for (int k = 0; k < 10; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "%04d", k);
    CHECK(fs::exists(d.path / "a" / "images" / (std::string(name) + ".ppm")));
    CHECK(fs::exists(d.path / "a" / "labels" / (std::string(name) + ".pgm")));
  }
  REQUIRE(run_cli({"synth", "--out", d / "b", "--count", "10", "--size", "32", "--classes", "2", "--fg-rate",
                   "0.05", "--seed", "7"}).code == 0);
  for (const auto& e : fs::recursive_directory_iterator(d.path / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path twin = d.path / "b" / fs::relative(e.path(), d.path / "a");
    CHECK(read_file(e.path()) == read_file(twin));
  }
}

TEST_CASE("train, eval, predict end to end") {
  TempDir d;
  REQUIRE(synth(d, "data", "16", "3", "6").code == 0);
  const Result t = run_cli({"train", "--data", d / "data", "--epochs", "3", "--batch", "2", "--seed", "3",
                            "--train-fraction", "0.5", "--out", d / "m.ckpt", "--history", d / "h.csv"});
  INFO(t.err);
  REQUIRE(t.code == 0);
  CHECK(t.out.find("final validation mIoU") != std::string::npos);
  CHECK(fs::exists(d / "m.ckpt"));
  const std::string hist = read_file(d / "h.csv");
  CHECK(hist.rfind("epoch,train_loss,val_loss,val_miou,seconds\n", 0) == 0);

  const Result e = run_cli({"eval", "--data", d / "data", "--model", d / "m.ckpt", "--report", d / "r.txt"});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("mIoU") != std::string::npos);
  std::istringstream report(read_file(d / "r.txt"));
  std::string line;
  std::vector<double> rows;
  double mean = -1.0;
  std::getline(report, line);
  CHECK(line.rfind("Category", 0) == 0);
  while (std::getline(report, line)) {
    std::istringstream ls(line);
    std::string name;
    double v;
    ls >> name >> v;
    if (name == "Mean") mean = v;
    else rows.push_back(v);
  }
  REQUIRE_FALSE(rows.empty());
  double s = 0.0;
  for (double v : rows) s += v;
  CHECK(std::abs(mean - s / static_cast<double>(rows.size())) < 1e-9);

  const std::string img = d / "data/images/0000.ppm";
  REQUIRE(run_cli({"predict", "--image", img, "--model", d / "m.ckpt", "--out", d / "p1.pgm", "--color",
                   d / "p1.ppm"}).code == 0);
  REQUIRE(run_cli({"predict", "--image", img, "--model", d / "m.ckpt", "--out", d / "p2.pgm"}).code == 0);
  CHECK(read_file(d / "p1.pgm") == read_file(d / "p2.pgm"));
  const LabelMap p = load_labels_pgm(d / "p1.pgm");
  CHECK(p.height == 16);
  CHECK(p.width == 16);
  for (int v : p.ids) CHECK(v < 3);
  CHECK(load_image_ppm(d / "p1.ppm").shape() == Shape{3, 16, 16});
}

TEST_CASE("runtime errors exit 1") {
  TempDir d;
  CHECK(run_cli({"train", "--data", d / "missing", "--out", d / "m", "--history", d / "h"}).code == 1);
  REQUIRE(synth(d, "two", "16", "2").code == 0);
  REQUIRE(synth(d, "three", "16", "3").code == 0);
  REQUIRE(run_cli({"train", "--data", d / "two", "--epochs", "1", "--train-fraction", "1", "--out", d / "m.ckpt",
                   "--history", d / "h.csv"}).code == 0);
  CHECK(run_cli({"eval", "--data", d / "three", "--model", d / "m.ckpt", "--report", d / "r.txt"}).code == 1);

  // 12 x 12 image: not divisible by 8.
  Tensor odd({3, 12, 12}, 0.5);
  save_image_ppm(d / "odd.ppm", odd);
  CHECK(run_cli({"predict", "--image", d / "odd.ppm", "--model", d / "m.ckpt", "--out", d / "o.pgm"}).code == 1);
}

TEST_CASE("config file supplies options and flags win") {
  TempDir d;
  REQUIRE(synth(d, "data", "8", "2", "3").code == 0);
  write_file(d / "run.cfg", "# training options\nepochs = 2\nlr = 0.05\nbatch=3\ntrain-fraction = 1\n");
  Result r = run_cli({"train", "--config", d / "run.cfg", "--data", d / "data", "--out", d / "m.ckpt",
                      "--history", d / "h.csv"});
  REQUIRE(r.code == 0);
  std::size_t lines = 0;
  for (char ch : read_file(d / "h.csv")) lines += ch == '\n';
  CHECK(lines == 1 + 2);

  r = run_cli({"train", "--config", d / "run.cfg", "--epochs", "1", "--data", d / "data", "--out", d / "m.ckpt",
               "--history", d / "h.csv"});
  REQUIRE(r.code == 0);
  lines = 0;
  for (char ch : read_file(d / "h.csv")) lines += ch == '\n';
  CHECK(lines == 1 + 1);

  write_file(d / "bad.cfg", "epochs = 2\nwarp = 9\n");
  CHECK(run_cli({"train", "--config", d / "bad.cfg", "--data", d / "data", "--out", d / "m.ckpt", "--history",
                 d / "h.csv"}).code == 2);
  write_file(d / "junk.cfg", "epochs 2\n");
  CHECK(run_cli({"train", "--config", d / "junk.cfg", "--data", d / "data", "--out", d / "m.ckpt", "--history",
                 d / "h.csv"}).code == 2);
  write_file(d / "range.cfg", "beta = 2\n");
  CHECK(run_cli({"train", "--config", d / "range.cfg", "--data", d / "data", "--out", d / "m.ckpt", "--history",
                 d / "h.csv"}).code == 2);
}

TEST_CASE("omitted lr, momentum, and epochs default to 0.1, 0.9, 210") {
  TempDir d;
  const Result r = run_cli({"train", "--data", d / "missing", "--out", d / "m", "--history", d / "h"});
  CHECK(r.code == 1);
  CHECK(r.out.find("lr 0.1 momentum 0.9 epochs 210 batch 4") != std::string::npos);
  const Result help = run_cli({"train", "--help"});
  CHECK(help.out.find("[210]") != std::string::npos);
}

TEST_CASE("gradcheck exit codes") {
  const Result ok = run_cli({"gradcheck", "--layer", "conv2d"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("conv2d") != std::string::npos);
  CHECK(ok.out.find("deconv") == std::string::npos);
  CHECK(run_cli({"gradcheck", "--layer", "conv2d", "--tol", "1e-12"}).code == 3);
  const Result all = run_cli({"gradcheck"});
  CHECK(all.code == 0);
  CHECK(all.out.find("network_improved") != std::string::npos);
}
