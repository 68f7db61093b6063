#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ducseg/checkpoint.hpp"
#include "ducseg/guided_filter.hpp"
#include "ducseg/io/dataset_io.hpp"
#include "ducseg/io/png.hpp"
#include "ducseg/shapes_dataset.hpp"
#include "ducseg/step_pair.hpp"

#ifndef DUCSEG_CLI
#error "DUCSEG_CLI must name the command-line binary"
#endif

namespace fs = std::filesystem;
using namespace ducseg;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("ducseg_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  CliRun run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(DUCSEG_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  /// 8 samples of 32x32 and a tiny model: the smoke configuration.
  void write_smoke(const std::string& data, const std::string& cfg, int epochs = 5) const {
    ASSERT_EQ(run("gen --out " + path(data).string() + " --count 8 --size 32 --classes 3 --seed 4").code, 0);
    std::ofstream(path(cfg)) << "backbone.stem_channels = 4\nbackbone.widths = 4,4,6,6\n"
                                "backbone.blocks_per_stage = 1\nduc.guidance_channels = 3\n"
                                "duc.out_channels = 4\ndlc.reduce_channels = 4\ndlc.pre_channels = 3\n"
                                "dlc.branch_channels = 3\ndlc.fuse_channels = 4\ntrain.epochs = "
                             << epochs << "\ntrain.batch_size = 2\ntrain.crop = 32\ntrain.base_lr = 0.01\n"
                             << "train.seed = 11\ntrain.val_fraction = 0.25\n";
  }

  fs::path dir_;
};

}  // namespace

// ---------------------------------------------------------------------------
// PNG and dataset files

TEST(Png, RoundTripsRgbAndLabels) {
  const auto dir = fs::temp_directory_path() / "ducseg_png_roundtrip";
  fs::create_directories(dir);
  SplitMix64 rng(1);
  const auto s = make_shapes_sample<double>(24, 5, rng);
  const auto rgb = io::tensor_to_raster(s.image);
  io::write_png((dir / "a.png").string(), rgb);
  const auto back = io::read_png_rgb((dir / "a.png").string());
  EXPECT_EQ(back.pixels, rgb.pixels);
  EXPECT_EQ(back.width, 24);
  const auto img = io::raster_to_tensor<double>(back);
  EXPECT_LE(max_abs_diff(img, s.image), 0.5 / 255 + 1e-12);

  io::write_png((dir / "l.png").string(), io::labels_to_raster(s.label));
  EXPECT_EQ(io::raster_to_labels(io::read_png_index((dir / "l.png").string())), s.label);
  EXPECT_THROW(io::read_png_index((dir / "a.png").string()), FormatError);
  EXPECT_THROW(io::read_png_rgb((dir / "missing.png").string()), FormatError);
  fs::remove_all(dir);
}

TEST(Png, PaletteIsFixed) {
  EXPECT_EQ(io::palette_color(0), (std::array<std::uint8_t, 3>{0, 0, 0}));
  EXPECT_EQ(io::palette_color(1), (std::array<std::uint8_t, 3>{128, 0, 0}));
  EXPECT_EQ(io::palette_color(2), (std::array<std::uint8_t, 3>{0, 128, 0}));
  EXPECT_EQ(io::palette_color(3), (std::array<std::uint8_t, 3>{128, 128, 0}));
  EXPECT_EQ(io::palette_color(4), (std::array<std::uint8_t, 3>{0, 0, 128}));
}

TEST(DatasetFiles, ManifestRoundTrip) {
  const auto dir = fs::temp_directory_path() / "ducseg_manifest_roundtrip";
  fs::remove_all(dir);
  const auto samples = make_shapes_dataset<double>(3, 16, 4, 2);
  io::write_dataset(dir, samples, 4);
  const auto m = io::read_manifest(dir);
  EXPECT_EQ(m.num_classes, 4);
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[2].image, "images/0002.png");
  const auto ds = io::read_dataset<double>(dir);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ds.samples[i].label, samples[i].label);

  std::ofstream(dir / "manifest.txt") << "classes=2\nimages/0000.png labels/0000.png\n";
  EXPECT_THROW(io::read_dataset<double>(dir), FormatError);  // labels reach class 3
  std::ofstream(dir / "manifest.txt") << "K=4\n";
  EXPECT_THROW(io::read_manifest(dir), FormatError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// gen

TEST_F(Cli, GenEmptyDataset) {
  const auto r = run("gen --out " + path("d").string() + " --count 0");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("d") / "manifest.txt"), "classes=4\n");
}

TEST_F(Cli, GenIsDeterministicAndLabelsInRange) {
  ASSERT_EQ(run("gen --out " + path("a").string() + " --count 4 --size 32 --classes 5 --seed 3").code, 0);
  ASSERT_EQ(run("gen --out " + path("b").string() + " --count 4 --size 32 --classes 5 --seed 3").code, 0);
  for (const char* f : {"manifest.txt", "images/0003.png", "labels/0003.png"}) {
    EXPECT_EQ(slurp(path("a") / f), slurp(path("b") / f)) << f;
  }
  for (int i = 0; i < 4; ++i) {
    const auto r = io::read_png_index((path("a") / "labels" / ("000" + std::to_string(i) + ".png")).string());
    for (auto v : r.pixels) EXPECT_LT(v, 5);
  }
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen --count 3").code, 2);
  EXPECT_EQ(run("rf --layers 3-3").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

// ---------------------------------------------------------------------------
// train, eval, infer

TEST_F(Cli, TrainMissingDataNamesPath) {
  const auto r = run("train --data " + path("nowhere").string() + " --out " + path("o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(path("nowhere").string()), std::string::npos) << r.err;
}

TEST_F(Cli, TrainRejectsUnknownConfigKey) {
  write_smoke("d", "c.cfg");
  std::ofstream(path("c.cfg"), std::ios::app) << "train.warmup = 3\n";
  const auto r = run("train --data " + path("d").string() + " --config " + path("c.cfg").string() +
                     " --out " + path("o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.warmup"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainIsReproducible) {
  write_smoke("d", "c.cfg");
  const std::string base = "train --data " + path("d").string() + " --config " + path("c.cfg").string();
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = run(base + " --out " + path("r1").string());
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 300.0);
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(run(base + " --out " + path("r2").string()).code, 0);
  for (const char* f : {"log.jsonl", "final.ckpt", "best.ckpt"}) {
    ASSERT_TRUE(fs::exists(path("r1") / f)) << f;
    EXPECT_EQ(slurp(path("r1") / f), slurp(path("r2") / f)) << f;
  }
  std::istringstream log(slurp(path("r1") / "log.jsonl"));
  std::string line;
  int epochs = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"], ++epochs);
    EXPECT_TRUE(j["val_miou"].is_number());
  }
  EXPECT_EQ(epochs, 5);
  // A --set override changes the run.
  ASSERT_EQ(run(base + " --set train.seed=12 --out " + path("r3").string()).code, 0);
  EXPECT_NE(slurp(path("r1") / "log.jsonl"), slurp(path("r3") / "log.jsonl"));
}

TEST_F(Cli, TrainDivergenceIsANumericalAbort) {
  write_smoke("d", "c.cfg");
  const auto r = run("train --data " + path("d").string() + " --config " + path("c.cfg").string() +
                     " --set train.base_lr=1e12 --out " + path("o").string());
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalAndInfer) {
  write_smoke("d", "c.cfg", 2);
  ASSERT_EQ(run("train --data " + path("d").string() + " --config " + path("c.cfg").string() +
                " --out " + path("r").string()).code, 0);
  const std::string ck = (path("r") / "final.ckpt").string();
  const auto plain = run("eval --data " + path("d").string() + " --ckpt " + ck);
  ASSERT_EQ(plain.code, 0) << plain.err;
  const auto one = run("eval --data " + path("d").string() + " --ckpt " + ck + " --scales 1.0");
  EXPECT_EQ(plain.out, one.out);
  const auto j = nlohmann::json::parse(plain.out);
  for (const char* key : {"pixel_accuracy", "mean_pixel_accuracy", "mean_iou", "final_score"}) {
    ASSERT_TRUE(j[key].is_number()) << key;
    EXPECT_GE(j[key].get<double>(), 0.0);
    EXPECT_LE(j[key].get<double>(), 1.0);
  }
  EXPECT_EQ(j["per_class_iou"].size(), 3u);
  EXPECT_EQ(run("eval --data " + path("d").string() + " --ckpt " + ck + " --scales 0.75,1,1.25").code, 0);

  // Re-feed the checkpoint's own predictions as labels: every metric is 1.
  const auto m = io::read_manifest(path("d"));
  fs::create_directories(path("self") / "images");
  fs::create_directories(path("self") / "labels");
  io::Manifest self{3, {}};
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    fs::copy_file(path("d") / e.image, path("self") / e.image);
    const auto seg = path("seg" + std::to_string(i) + ".png");
    const auto r = run("infer --image " + (path("d") / e.image).string() + " --ckpt " + ck + " --out " + seg.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto idx = path("seg" + std::to_string(i) + "_index.png");
    const auto color = io::read_png_rgb(seg.string());
    const auto labels = io::read_png_index(idx.string());
    EXPECT_EQ(color.width, 32);
    EXPECT_EQ(color.height, 32);
    for (std::size_t p = 0; p < labels.pixels.size(); ++p) {
      ASSERT_LT(labels.pixels[p], 3);
      const auto c = io::palette_color(labels.pixels[p]);
      EXPECT_EQ(color.pixels[3 * p], c[0]);
    }
    fs::copy_file(idx, path("self") / e.label);
    self.entries.push_back(e);
  }
  io::write_manifest(path("self"), self);
  const auto s = nlohmann::json::parse(run("eval --data " + path("self").string() + " --ckpt " + ck).out);
  EXPECT_DOUBLE_EQ(s["pixel_accuracy"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(s["mean_iou"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(s["mean_pixel_accuracy"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(s["final_score"].get<double>(), 1.0);

  // Infer twice: identical bytes.
  const std::string first = (path("d") / m.entries[0].image).string();
  ASSERT_EQ(run("infer --image " + first + " --ckpt " + ck + " --out " + path("x.png").string()).code, 0);
  EXPECT_EQ(slurp(path("x.png")), slurp(path("seg0.png")));
}

TEST_F(Cli, CorruptCheckpointIsADataError) {
  write_smoke("d", "c.cfg");
  std::ofstream(path("bad.ckpt")) << "not a checkpoint";
  const auto r = run("eval --data " + path("d").string() + " --ckpt " + path("bad.ckpt").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("magic"), std::string::npos) << r.err;
}

// ---------------------------------------------------------------------------
// guided-upsample and rf

TEST_F(Cli, GuidedUpsampleAtUnitScaleIsGuidedFiltering) {
  SplitMix64 rng(3);
  const auto a = make_shapes_sample<double>(32, 4, rng), b = make_shapes_sample<double>(32, 4, rng);
  io::write_png(path("t.png").string(), io::tensor_to_raster(a.image));
  io::write_png(path("g.png").string(), io::tensor_to_raster(b.image));
  const auto r = run("guided-upsample --target " + path("t.png").string() + " --guide " + path("g.png").string() +
                     " --radius 2 --eps 0.01 --out " + path("o.png").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = io::raster_to_tensor<double>(io::read_png_rgb(path("t.png").string()));
  const auto g = io::raster_to_tensor<double>(io::read_png_rgb(path("g.png").string()));
  const auto want = io::tensor_to_raster(guided_filter(g, t, GuidedFilterConfig{2, 0.01}));
  EXPECT_EQ(io::read_png_rgb(path("o.png").string()).pixels, want.pixels);
}

TEST_F(Cli, GuidedUpsampleWithConstantGuideIsBilinearBoxMean) {
  SplitMix64 rng(4);
  const auto lo = make_shapes_sample<double>(16, 4, rng);
  Tensor4<double> guide({1, 3, 64, 64});
  for (auto& v : guide.data()) v = 100.0 / 255.0;
  io::write_png(path("t.png").string(), io::tensor_to_raster(lo.image));
  io::write_png(path("g.png").string(), io::tensor_to_raster(guide));
  ASSERT_EQ(run("guided-upsample --target " + path("t.png").string() + " --guide " + path("g.png").string() +
                " --radius 1 --eps 1e-3 --out " + path("o.png").string()).code, 0);
  const auto t = io::raster_to_tensor<double>(io::read_png_rgb(path("t.png").string()));
  // a = 0 everywhere, so the output is the window-averaged b = box_mean(box_mean(t)).
  const auto want = bilinear_resize_forward(box_mean(box_mean(t, 1), 1), 64, 64);
  const auto got = io::raster_to_tensor<double>(io::read_png_rgb(path("o.png").string()));
  EXPECT_LE(max_abs_diff(got, want), 0.5 / 255 + 1e-9);
}

TEST_F(Cli, GuidedUpsampleBeatsBilinearOnStepEdges) {
  const auto pair = make_step_pair<double>(5, 64, 4);
  auto rgb = [](const Tensor4<double>& x) { return concat_channels(concat_channels(x, x), x); };
  io::write_png(path("t.png").string(), io::tensor_to_raster(rgb(pair.low)));
  io::write_png(path("g.png").string(), io::tensor_to_raster(rgb(pair.high)));
  const auto r = run("guided-upsample --target " + path("t.png").string() + " --guide " + path("g.png").string() +
                     " --radius 1 --eps 1e-4 --out " + path("o.png").string() + " --reference " +
                     path("g.png").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_GT(j["psnr_guided"].get<double>(), j["psnr_bilinear"].get<double>()) << r.out;
}

TEST_F(Cli, ReceptiveFieldCalculator) {
  auto last = [](const std::string& s) {
    const auto p = s.rfind("rf=");
    return std::stoi(s.substr(p + 3));
  };
  EXPECT_EQ(last(run("rf --layers 3:24").out), 49);
  EXPECT_EQ(last(run("rf --layers 3:3,3:6,3:12,3:18").out), 79);
  EXPECT_EQ(last(run("rf --layers 1:7").out), 1);
  EXPECT_NE(run("rf --layers 3:3,3:6").out.find("layer 2 k=3 d=6 rf=13"), std::string::npos);
}
