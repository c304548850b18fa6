#include "resseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "resseg/data_io.hpp"
#include "resseg/errors.hpp"
#include "resseg/gradcheck.hpp"
#include "resseg/metrics.hpp"
#include "resseg/synth.hpp"
#include "resseg/trainer.hpp"

namespace resseg::cli {

namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  std::string out;
  std::size_t count = 100;
  std::size_t size = 64;
  std::size_t classes = 2;
  double fg_rate = 0.2;
  double noise = 0.15;
  std::size_t min_shapes = 1;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string data;
  std::string arch = "improved";
  std::string loss = "ce";
  double beta = 0.75;
  std::size_t epochs = 210;
  double lr = 0.1;
  double momentum = 0.9;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  std::string scale = "desk";
  std::size_t convs_per_stage = 1;
  double train_fraction = 0.8;
  std::size_t checkpoint_every = 0;
  bool wall_time = false;
  std::string out;
  std::string history;
};

struct EvalArgs {
  std::string data;
  std::string model;
  std::string report;
  std::size_t batch = 4;
};

struct PredictArgs {
  std::string image;
  std::string model;
  std::string out;
  std::string color;
};

struct GradcheckArgs {
  double eps = 1e-3;
  double tol = 1e-4;
  std::string layer;
  std::uint64_t seed = 1234;
};

const CLI::Validator kMultipleOf8(
    [](std::string& s) -> std::string {
      try {
        const long v = std::stol(s);
        if (v > 0 && v % 8 == 0) return {};
      } catch (const std::exception&) {
      }
      return "must be a positive multiple of 8";
    },
    "MULTIPLE_OF_8");

struct ConfigEntry {
  std::string key;
  std::string value;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<ConfigEntry> read_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  std::vector<ConfigEntry> entries;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    entries.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }
  return entries;
}

std::string config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

ArchConfig arch_for(const TrainArgs& a, std::size_t classes) {
  const Architecture arch = parse_architecture(a.arch);
  ArchConfig cfg = a.scale == "paper" ? ArchConfig::paper(classes, arch) : ArchConfig::desk(classes, arch);
  cfg.convs_per_stage = a.convs_per_stage;
  return cfg;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  cfg.count = a.count;
  cfg.size = a.size;
  cfg.class_count = a.classes;
  cfg.foreground_rate = a.fg_rate;
  cfg.noise = a.noise;
  cfg.min_shapes = a.min_shapes;
  cfg.seed = a.seed;
  cfg.validate();
  const Dataset data = generate_synthetic(cfg);
  save_dataset(data, a.out);
  char line[128];
  std::snprintf(line, sizeof line, "wrote %zu samples to %s; foreground fraction %.6f\n", data.size(),
                a.out.c_str(), foreground_fraction(data));
  out << line;
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.momentum = a.momentum;
  tc.epoch_limit = a.epochs;
  tc.batch_size = a.batch;
  tc.seed = a.seed;
  tc.loss = a.loss == "bce" ? LossKind::balanced : LossKind::standard;
  tc.loss_cfg.beta = a.beta;
  tc.checkpoint_every = a.checkpoint_every;
  tc.measure_time = a.wall_time;
  tc.validate();
  {
    char line[256];
    std::snprintf(line, sizeof line,
                  "arch %s scale %s loss %s beta %g lr %g momentum %g epochs %zu batch %zu seed %llu\n",
                  a.arch.c_str(), a.scale.c_str(), a.loss.c_str(), a.beta, a.lr, a.momentum, a.epochs, a.batch,
                  static_cast<unsigned long long>(a.seed));
    out << line;
  }

  const Dataset data = load_dataset(a.data);
  DatasetSplit parts;
  if (a.train_fraction >= 1.0) {
    parts.train = data;
    parts.validation.class_count = data.class_count;
  } else {
    parts = split(data, a.train_fraction, a.seed);
  }

  Rng rng(a.seed);
  Network net = build_network(arch_for(a, data.class_count), rng);
  auto on_epoch = [&](const EpochRecord& rec, Network& n, bool due) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu train_loss %.6f val_loss %.6f val_miou %.6f\n", rec.epoch,
                  rec.train_loss, rec.val_loss, rec.val_miou);
    out << line;
    if (due) save_checkpoint(n, a.out + ".epoch" + std::to_string(rec.epoch));
  };
  const TrainHistory history = train(net, parts.train, parts.validation, tc, on_epoch);
  save_checkpoint(net, a.out);
  write_file(a.history, history_csv(history));
  const double final_miou = history.epochs.back().val_miou;
  if (std::isnan(final_miou)) {
    out << "final validation mIoU: n/a (no validation split)\n";
  } else {
    char line[96];
    std::snprintf(line, sizeof line, "final validation mIoU: %.6f\n", final_miou);
    out << line;
  }
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Dataset data = load_dataset(a.data);
  Network net = load_checkpoint(a.model);
  if (net.config().class_count != data.class_count) {
    throw CheckpointError("checkpoint predicts " + std::to_string(net.config().class_count) +
                          " classes but the dataset has " + std::to_string(data.class_count));
  }
  const MetricsReport report = evaluate(net, data, {a.batch, LossKind::standard, {}});
  write_file(a.report, render_iou_table(report));
  char line[96];
  std::snprintf(line, sizeof line, "mIoU: %.6f\n", report.mean_iou);
  out << line;
  return kOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const Tensor image = load_image_ppm(a.image);
  Network net = load_checkpoint(a.model);
  net.set_training(false);
  const Tensor prob = net.forward(Tensor({1, image.dim(0), image.dim(1), image.dim(2)},
                                         std::vector<double>(image.data().begin(), image.data().end())));
  const LabelMap labels = argmax_labels(prob);
  save_labels_pgm(a.out, labels);
  if (!a.color.empty()) {
    save_image_ppm(a.color, colorize_labels(labels, default_palette(net.config().class_count)));
  }
  out << "wrote " << a.out << " (" << labels.width << "x" << labels.height << ")\n";
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradCheckOptions opts;
  opts.eps = a.eps;
  opts.tol = a.tol;
  opts.seed = a.seed;
  if (!a.layer.empty()) opts.only = a.layer;
  const auto results = run_gradcheck(opts);
  bool ok = true;
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%-18s max_rel_error %.3e probes %6zu skipped %4zu %s\n",
                  r.name.c_str(), r.max_rel_error, r.probes, r.skipped, r.passed ? "ok" : "FAIL");
    out << line;
    ok = ok && r.passed;
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual encoder-decoder segmentation toolkit", "resseg"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  std::string config_file;

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic segmentation dataset");
  synth->add_option("--config", config_file, "key = value option file");
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_option("--count", sa.count, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", sa.size, "Image height and width")->check(kMultipleOf8);
  synth->add_option("--classes", sa.classes, "Class count including background")->check(CLI::Range(2, 255));
  synth->add_option("--fg-rate", sa.fg_rate, "Target foreground fraction")
      ->check(CLI::Range(0.0, 1.0).description("in (0,1)"));
  synth->add_option("--noise", sa.noise, "Texture noise half-width")->check(CLI::Range(0.0, 0.5));
  synth->add_option("--min-shapes", sa.min_shapes, "Minimum shapes per image")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sa.seed, "Generator seed");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a network");
  train_cmd->add_option("--config", config_file, "key = value option file");
  train_cmd->add_option("--data", ta.data, "Dataset directory")->required();
  train_cmd->add_option("--arch", ta.arch, "Architecture")->check(CLI::IsMember({"improved", "baseline"}));
  train_cmd->add_option("--loss", ta.loss, "ce or bce (balanced)")->check(CLI::IsMember({"ce", "bce"}));
  train_cmd->add_option("--beta", ta.beta, "Balancing factor")->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--epochs", ta.epochs, "Epoch limit")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", ta.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--momentum", ta.momentum, "Momentum")->check(CLI::Range(0.0, 0.999999));
  train_cmd->add_option("--batch", ta.batch, "Mini-batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", ta.seed, "Seed for init, shuffling, and the split");
  train_cmd->add_option("--scale", ta.scale, "desk (16,32,64) or paper (64,128,256)")
      ->check(CLI::IsMember({"desk", "paper"}));
  train_cmd->add_option("--convs-per-stage", ta.convs_per_stage, "Conv blocks per encoder stage")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--train-fraction", ta.train_fraction, "Share of samples used for training; 1 disables validation")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Extra checkpoint every k epochs");
  train_cmd->add_flag("--wall-time", ta.wall_time, "Record epoch wall time in the history");
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--history", ta.history, "History CSV path")->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Per-class IoU report");
  eval_cmd->add_option("--config", config_file, "key = value option file");
  eval_cmd->add_option("--data", ea.data, "Dataset directory")->required();
  eval_cmd->add_option("--model", ea.model, "Checkpoint")->required();
  eval_cmd->add_option("--report", ea.report, "Report path")->required();
  eval_cmd->add_option("--batch", ea.batch, "Batch size")->check(CLI::PositiveNumber);

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "Segment one image");
  predict_cmd->add_option("--config", config_file, "key = value option file");
  predict_cmd->add_option("--image", pa.image, "Input PPM")->required();
  predict_cmd->add_option("--model", pa.model, "Checkpoint")->required();
  predict_cmd->add_option("--out", pa.out, "Output label PGM")->required();
  predict_cmd->add_option("--color", pa.color, "Optional colorized PPM");

  GradcheckArgs ga;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck_cmd->add_option("--config", config_file, "key = value option file");
  gradcheck_cmd->add_option("--eps", ga.eps, "Central-difference step")->check(CLI::PositiveNumber);
  gradcheck_cmd->add_option("--tol", ga.tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  gradcheck_cmd->add_option("--layer", ga.layer, "Restrict to one target")
      ->check(CLI::IsMember(gradcheck_target_names()));
  gradcheck_cmd->add_option("--seed", ga.seed, "Seed for the random probes");

  try {
    std::vector<std::string> argv = args;
    if (!argv.empty()) {
      if (const std::string cfg = config_path(argv); !cfg.empty()) {
        CLI::App* sub = nullptr;
        for (auto* s : app.get_subcommands({})) {
          if (s->get_name() == argv[0]) sub = s;
        }
        if (sub == nullptr) throw ConfigError("--config must follow a subcommand");
        std::vector<std::string> injected;
        for (const auto& e : read_config(cfg)) {
          if (e.key == "config" || sub->get_option_no_throw("--" + e.key) == nullptr) {
            throw ConfigError("unknown config key '" + e.key + "' for " + argv[0]);
          }
          injected.push_back("--" + e.key + "=" + e.value);
        }
        argv.insert(argv.begin() + 1, injected.begin(), injected.end());
      }
    }
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? kOk : kUsageError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*train_cmd) return cmd_train(ta, out);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*predict_cmd) return cmd_predict(pa, out);
    return cmd_gradcheck(ga, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace resseg::cli
