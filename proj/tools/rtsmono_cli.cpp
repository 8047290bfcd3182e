#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtsmono/dataset.hpp"
#include "rtsmono/depth_net.hpp"
#include "rtsmono/image_io.hpp"
#include "rtsmono/metrics.hpp"
#include "rtsmono/ops.hpp"
#include "rtsmono/scene.hpp"
#include "rtsmono/train.hpp"

namespace fs = std::filesystem;
using namespace rtsmono;

namespace {

struct Resolution {
  int width = 0, height = 0;
};

Resolution parse_resolution(const std::string& s) {
  Resolution r;
  char x = 0;
  char extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &r.width, &x, &r.height, &extra) != 3 || (x != 'x' && x != 'X') ||
      r.width <= 0 || r.height <= 0) {
    throw std::invalid_argument("resolution must look like WxH, got '" + s + "'");
  }
  return r;
}

void require_divisible(int width, int height, const std::string& what) {
  if (width % 16 == 0 && height % 16 == 0) return;
  const int pw = (width + 15) / 16 * 16, ph = (height + 15) / 16 * 16;
  throw std::invalid_argument(what + " " + std::to_string(width) + "x" + std::to_string(height) +
                              " is not divisible by 16; pad to " + std::to_string(pw) + "x" + std::to_string(ph));
}

/// Depth [H,W] for a [3,H,W] image at its own resolution.
Tensor<float> predict_depth(const DepthNet<float>& net, const Tensor<float>& image) {
  require_divisible(static_cast<int>(image.dim(2)), static_cast<int>(image.dim(1)), "image");
  NoGradGuard guard;
  const auto disp = net.forward(Var<float>(image.reshaped({1, 3, image.dim(1), image.dim(2)})));
  const auto& cfg = net.config();
  return disp_to_depth(disp, cfg.dmin, cfg.dmax).value().reshaped({image.dim(1), image.dim(2)});
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  int scenes = 3;
  int frames = 20;
  std::uint64_t seed = 1;
  std::string resolution = "320x96";
};

int cmd_synth(const SynthArgs& a) {
  const Resolution r = parse_resolution(a.resolution);
  require_divisible(r.width, r.height, "resolution");
  if (a.scenes < 1 || a.frames < 1) throw std::invalid_argument("--scenes and --frames must be positive");
  // Validate every scene before the first byte is written.
  std::vector<SceneSpec> specs;
  for (int i = 0; i < a.scenes; ++i) {
    specs.push_back(make_random_scene(a.seed + static_cast<std::uint64_t>(i), a.frames, r.width, r.height));
    specs.back().validate();
  }
  fs::create_directories(a.out);
  for (const auto& s : specs) {
    generate_scene(s, a.out);
    spdlog::info("wrote {} ({} frames)", (a.out / s.name).string(), s.frame_count());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  fs::path resume;
  fs::path split;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::read(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  fs::create_directories(a.out);
  const auto stats = run_training(cfg, TrainRun{a.data, a.out, a.resume, a.split, nullptr});
  if (!stats.empty()) {
    const auto& s = stats.back();
    spdlog::info("finished at step {}: total {:.5f} (L_p {:.5f}, L_s {:.5f}, L_d {:.5f})", s.step, s.total, s.lp,
                 s.ls, s.ld);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  fs::path ckpt;
  fs::path image;
  fs::path out;
};

int cmd_infer(const InferArgs& a) {
  const Tensor<float> image = read_png(a.image);
  require_divisible(static_cast<int>(image.dim(2)), static_cast<int>(image.dim(1)), "image");
  const auto trainer = Trainer::load(a.ckpt);
  const Tensor<float> depth = predict_depth(trainer->depth(), image);
  write_pfm(a.out, depth);

  // Inverse depth normalised to [0, 1] for viewing.
  Tensor<float> vis(depth.shape());
  float lo = INFINITY, hi = -INFINITY;
  for (float d : depth.data()) lo = std::min(lo, 1.0f / d), hi = std::max(hi, 1.0f / d);
  const float span = hi > lo ? hi - lo : 1.0f;
  for (std::int64_t i = 0; i < depth.size(); ++i) vis[i] = (1.0f / depth[i] - lo) / span;
  fs::path png = a.out;
  png.replace_extension(".png");
  write_png(png, vis);
  spdlog::info("wrote {} and {}", a.out.string(), png.string());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path ckpt;
  fs::path data;
  fs::path split;
  fs::path csv;
  double max_depth = 80.0;
  std::string median_scale = "on";
};

int cmd_eval(const EvalArgs& a) {
  if (a.median_scale != "on" && a.median_scale != "off") throw std::invalid_argument("--median-scale must be on or off");
  const bool median_scale = a.median_scale == "on";
  const auto entries = a.split.empty() ? list_frames(a.data) : read_split(a.split);
  if (entries.empty()) throw std::invalid_argument("no frames to evaluate under " + a.data.string());
  const auto trainer = Trainer::load(a.ckpt);

  std::vector<MetricsRow> rows;
  std::vector<std::string> skipped;
  for (const auto& e : entries) {
    const fs::path dir = a.data / e.sequence;
    const std::string name = e.sequence + "/" + std::to_string(e.index);
    const Tensor<float> gt = read_pfm(depth_path(dir, e.index));
    bool any = false;
    for (float g : gt.data()) any = any || (g > 0 && g <= a.max_depth);
    if (!any) {
      skipped.push_back(name);
      continue;
    }
    const Tensor<float> pred = predict_depth(trainer->depth(), read_png(frame_path(dir, e.index)));
    rows.push_back({name, compute_metrics(pred, gt, a.max_depth, median_scale)});
  }
  if (!rows.empty()) {
    const MetricsReport mean = write_metrics_csv(a.csv, rows);
    std::cout << metrics_csv_header() << '\n' << format_metrics_row("MEAN", mean) << '\n';
  }
  if (!skipped.empty()) {
    std::string list;
    for (const auto& s : skipped) list += (list.empty() ? "" : ", ") + s;
    throw std::runtime_error(std::to_string(skipped.size()) + " of " + std::to_string(entries.size()) +
                             fmt::format(" images skipped with no ground truth in (0, {}]: ", a.max_depth) + list);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  fs::path ckpt;
  std::string variant;
  std::string resolution = "640x192";
  int iters = 20;
  int warmup = 3;
};

int cmd_bench(const BenchArgs& a) {
  const Resolution r = parse_resolution(a.resolution);
  require_divisible(r.width, r.height, "resolution");
  if (a.iters < 1 || a.warmup < 0) throw std::invalid_argument("--iters must be positive and --warmup non-negative");
  if (a.ckpt.empty() == a.variant.empty()) throw std::invalid_argument("give exactly one of --ckpt or --variant");

  std::unique_ptr<Trainer> trainer;
  std::unique_ptr<DepthNet<float>> fresh;
  if (!a.ckpt.empty()) {
    trainer = Trainer::load(a.ckpt);
  } else {
    fresh = std::make_unique<DepthNet<float>>(ModelConfig::preset(parse_variant(a.variant), r.width, r.height), 0);
  }
  const DepthNet<float>& net = trainer ? trainer->depth() : *fresh;

  NoGradGuard guard;
  const Var<float> input(Tensor<float>({1, 3, r.height, r.width}, 0.5f));
  std::int64_t macs = 0;
  {
    MacCounter counter;
    net.forward(input);
    macs = counter.macs();
  }
  for (int i = 0; i < a.warmup; ++i) net.forward(input);
  std::vector<double> ms;
  for (int i = 0; i < a.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    net.forward(input);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const double med = median(ms);
  const auto p95_rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
  const double p95 = ms[std::max<std::size_t>(p95_rank, 1) - 1];

  const std::int64_t enc = net.encoder_parameter_count(), dec = net.decoder_parameter_count();
  std::printf("variant            %s\n", to_string(net.config().variant).c_str());
  std::printf("resolution         %dx%d\n", r.width, r.height);
  std::printf("params encoder     %lld (%.3f M)\n", static_cast<long long>(enc), enc / 1e6);
  std::printf("params decoder     %lld (%.3f M)\n", static_cast<long long>(dec), dec / 1e6);
  std::printf("params full        %lld (%.3f M)\n", static_cast<long long>(enc + dec), (enc + dec) / 1e6);
  std::printf("flops (2 x MACs)   %lld (%.3f G)\n", static_cast<long long>(2 * macs), 2.0 * macs / 1e9);
  std::printf("latency median     %.2f ms over %d iters after %d warmup\n", med, a.iters, a.warmup);
  std::printf("latency p95        %.2f ms\n", p95);
  std::printf("fps                %.2f (this machine, informational)\n", 1000.0 / med);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("rtsmono");
  spdlog::set_default_logger(logger);

  CLI::App app{"rtsmono: self-supervised monocular depth toolkit"};
  app.require_subcommand(1);
  app.failure_message([](const CLI::App*, const CLI::Error& e) { return "error: " + std::string(e.what()) + "\n"; });
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Render a synthetic multi-scene dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--scenes", synth.scenes, "Number of scenes")->capture_default_str();
  s->add_option("--frames", synth.frames, "Frames per scene")->capture_default_str();
  s->add_option("--seed", synth.seed, "Seed of the first scene; scene i uses seed + i")->capture_default_str();
  s->add_option("--resolution", synth.resolution, "WxH, both divisible by 16")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train depth and pose networks");
  t->add_option("--config", train.config, "key = value config file");
  t->add_option("--data", train.data, "Dataset root")->required();
  t->add_option("--out", train.out, "Output directory for the log and checkpoints")->required();
  t->add_option("--resume", train.resume, "Checkpoint to continue from");
  t->add_option("--split", train.split, "Split file; default is every frame under --data");
  t->add_option("--set", train.overrides, "Config override key=value, repeatable; applied after --config");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Predict a depth map for one image");
  i->add_option("--ckpt", infer.ckpt, "Checkpoint")->required();
  i->add_option("--image", infer.image, "Input PNG")->required();
  i->add_option("--out", infer.out, "Output PFM; a PNG visualisation is written alongside")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate depth predictions against ground truth");
  e->add_option("--ckpt", eval.ckpt, "Checkpoint")->required();
  e->add_option("--data", eval.data, "Dataset root")->required();
  e->add_option("--split", eval.split, "Split file; default is every frame under --data");
  e->add_option("--csv", eval.csv, "Per-image metrics CSV")->required();
  e->add_option("--max-depth", eval.max_depth, "Depth cap in metres")->capture_default_str();
  e->add_option("--median-scale", eval.median_scale, "on or off")->capture_default_str();

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Report parameter counts, FLOPs and latency");
  b->add_option("--ckpt", bench.ckpt, "Checkpoint");
  b->add_option("--variant", bench.variant, "Fresh model preset instead of a checkpoint (XS, S, desk, test)");
  b->add_option("--resolution", bench.resolution, "WxH input size")->capture_default_str();
  b->add_option("--iters", bench.iters, "Timed forward passes")->capture_default_str();
  b->add_option("--warmup", bench.warmup, "Untimed forward passes first")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (i->parsed()) return cmd_infer(infer);
    if (e->parsed()) return cmd_eval(eval);
    if (b->parsed()) return cmd_bench(bench);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 1;
}
