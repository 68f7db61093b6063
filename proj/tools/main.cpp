// ducseg command-line tool.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data or format
// error, 4 numerical abort. Results go to stdout, diagnostics to stderr.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ducseg/checkpoint.hpp"
#include "ducseg/config.hpp"
#include "ducseg/dlc.hpp"
#include "ducseg/guided_filter.hpp"
#include "ducseg/io/dataset_io.hpp"
#include "ducseg/io/png.hpp"
#include "ducseg/shapes_dataset.hpp"
#include "ducseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace ducseg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

/// Seed stream for parameter initialization, separate from shuffling and augmentation.
constexpr std::uint64_t kInitStream = 0x494E4954ULL;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path)) throw ConfigError(std::string(what) + " directory not found: " + path);
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  int count = 0, size = 64, classes = 4;
  std::uint64_t seed = 0;
};

void cmd_gen(const GenArgs& a) {
  if (a.count < 0) throw ConfigError("--count must be >= 0");
  const auto samples = make_shapes_dataset<double>(a.count, a.size, a.classes, a.seed);
  io::write_dataset(a.out, samples, a.classes);
  std::cerr << "wrote " << a.count << " samples to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out;
  std::vector<std::string> overrides;
};

void cmd_train(const TrainArgs& a) {
  require_dir(a.data, "data");
  RunConfig rc;
  if (!a.config.empty()) apply_config_text(rc, read_text(a.config), a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    apply_config_entry(rc, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (!(rc.val_fraction >= 0.0 && rc.val_fraction < 1.0)) {
    throw ConfigError("train.val_fraction must be in [0, 1)");
  }
  rc.train.validate();

  auto ds = io::read_dataset<double>(a.data);
  rc.model.num_classes = ds.num_classes;
  const ModelConfig model = rc.model.resolved();

  const auto total = ds.samples.size();
  const auto n_val = static_cast<std::size_t>(std::floor(rc.val_fraction * static_cast<double>(total)));
  if (total - n_val == 0) throw ConfigError("no training samples in " + a.data);
  std::vector<Sample<double>> val(ds.samples.end() - static_cast<std::ptrdiff_t>(n_val), ds.samples.end());
  ds.samples.resize(total - n_val);

  if (auto w = receptive_field_warning(model.dlc, rc.train.augment.crop / model.backbone.required_divisor())) {
    std::cerr << "warning: " << *w << "\n";
  }

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw FormatError("cannot create " + a.out + ": " + ec.message());
  const fs::path out(a.out);
  std::ofstream log(out / "log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw FormatError("cannot write " + (out / "log.jsonl").string());

  auto init_rng = SplitMix64::derive(rc.train.seed, kInitStream);
  auto params = init_model_params<double>(model, init_rng);
  std::optional<double> best;
  std::cerr << "training on " << ds.samples.size() << " samples, validating on " << val.size() << "\n";
  train(model, params, ds.samples, val.empty() ? nullptr : &val, rc.train,
        [&](const EpochRecord& r, ModelParams<double>& p) {
          log << to_json(r).dump() << '\n' << std::flush;
          std::cerr << "epoch " << r.epoch << " loss " << r.mean_loss;
          if (r.val_miou) std::cerr << " val mIoU " << *r.val_miou;
          std::cerr << "\n";
          if (r.val_miou && (!best || *r.val_miou > *best)) {
            best = r.val_miou;
            save_checkpoint((out / "best.ckpt").string(), model, p);
          }
        });
  save_checkpoint((out / "final.ckpt").string(), model, params);
  // Without validation there is no ranking; the final weights stand in.
  if (!best) save_checkpoint((out / "best.ckpt").string(), model, params);
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data, ckpt;
  std::vector<double> scales{1.0};
};

void cmd_eval(const EvalArgs& a) {
  require_dir(a.data, "data");
  auto ck = load_checkpoint(a.ckpt);
  const auto ds = io::read_dataset<double>(a.data);
  if (ds.num_classes != ck.config.num_classes) {
    throw FormatError("dataset has " + std::to_string(ds.num_classes) + " classes, checkpoint " +
                      std::to_string(ck.config.num_classes));
  }
  const auto m = evaluate(ds.samples, ck.config, ck.params, std::span<const double>(a.scales));
  std::cout << to_json(m).dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string image, ckpt, out;
};

std::string index_path(const std::string& out) {
  fs::path p(out);
  return (p.parent_path() / (p.stem().string() + "_index.png")).string();
}

void cmd_infer(const InferArgs& a) {
  auto ck = load_checkpoint(a.ckpt);
  const auto image = io::raster_to_tensor<double>(io::read_png_rgb(a.image));
  const std::vector<double> one{1.0};
  const LabelMap pred = predict(image, ck.config, ck.params, std::span<const double>(one));
  io::write_png(a.out, io::colorize(pred));
  io::write_png(index_path(a.out), io::labels_to_raster(pred));
}

// ---------------------------------------------------------------------------

struct UpsampleArgs {
  std::string target, guide, out, reference;
  int radius = 4;
  double eps = 1e-4;
};

void cmd_guided_upsample(const UpsampleArgs& a) {
  const GuidedFilterConfig cfg{a.radius, a.eps};
  cfg.validate();
  const auto target = io::raster_to_tensor<double>(io::read_png_rgb(a.target));
  const auto guide = io::raster_to_tensor<double>(io::read_png_rgb(a.guide));
  const auto result = joint_upsample(target, guide, cfg);
  io::write_png(a.out, io::tensor_to_raster(result));
  if (!a.reference.empty()) {
    const auto ref = io::raster_to_tensor<double>(io::read_png_rgb(a.reference));
    if (ref.shape() != guide.shape()) throw FormatError("reference and guide differ in size");
    const auto plain = bilinear_resize_forward(target, guide.h(), guide.w());
    nlohmann::json j;
    j["psnr_guided"] = psnr(result, ref);
    j["psnr_bilinear"] = psnr(plain, ref);
    std::cout << j.dump(2) << "\n";
  }
}

// ---------------------------------------------------------------------------

std::vector<RfLayer> parse_layers(const std::string& spec) {
  std::vector<RfLayer> layers;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("--layers expects k:d pairs, got '" + item + "'");
    const auto k = detail::parse_number<int>("--layers", detail::trim(item.substr(0, colon)));
    const auto d = detail::parse_number<int>("--layers", detail::trim(item.substr(colon + 1)));
    layers.push_back({k, d});
  }
  if (layers.empty()) throw ConfigError("--layers is empty");
  return layers;
}

void cmd_rf(const std::string& spec) {
  const auto layers = parse_layers(spec);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::cout << "layer " << i + 1 << " k=" << layers[i].kernel << " d=" << layers[i].dilation
              << " rf=" << receptive_field(layers[i].kernel, layers[i].dilation) << "\n";
  }
  std::cout << "stacked rf=" << stack_receptive_field(layers) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DUC/DLC semantic segmentation toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic shapes dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of samples")->required();
  g->add_option("--size", gen.size, "Image side length")->capture_default_str();
  g->add_option("--classes", gen.classes, "Class count including background")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--out", tr.out, "Output directory for checkpoints and log")->required();
  t->add_option("--set", tr.overrides, "Override a config key (KEY=VALUE), applied after --config");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint; prints metrics JSON");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  e->add_option("--scales", ev.scales, "Comma-separated inference scales")->delimiter(',');

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Segment one image");
  i->add_option("--image", in.image, "Input PNG")->required();
  i->add_option("--ckpt", in.ckpt, "Checkpoint file")->required();
  i->add_option("--out", in.out, "Colorized output PNG (index map written as <stem>_index.png)")->required();

  UpsampleArgs up;
  auto* u = app.add_subcommand("guided-upsample", "Guided joint upsampling of an image");
  u->add_option("--target", up.target, "Low-resolution PNG")->required();
  u->add_option("--guide", up.guide, "High-resolution guide PNG")->required();
  u->add_option("--radius", up.radius, "Window radius")->capture_default_str();
  u->add_option("--eps", up.eps, "Regularizer epsilon")->capture_default_str();
  u->add_option("--out", up.out, "Output PNG")->required();
  u->add_option("--reference", up.reference, "High-resolution reference for PSNR");

  std::string layers;
  auto* r = app.add_subcommand("rf", "Receptive field of stacked dilated convolutions");
  r->add_option("--layers", layers, "Comma-separated k:d pairs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*g) cmd_gen(gen);
    if (*t) cmd_train(tr);
    if (*e) cmd_eval(ev);
    if (*i) cmd_infer(in);
    if (*u) cmd_guided_upsample(up);
    if (*r) cmd_rf(layers);
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical error: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const FormatError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const ShapeError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kExitData;
  }
  return 0;
}
