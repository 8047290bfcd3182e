// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any gated criterion fails.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fd_cases.hpp"
#include "oracles.hpp"
#include "rtsmono/camera.hpp"
#include "rtsmono/dataset.hpp"
#include "rtsmono/depth_net.hpp"
#include "rtsmono/losses.hpp"
#include "rtsmono/metrics.hpp"
#include "rtsmono/scene.hpp"
#include "rtsmono/train.hpp"

using namespace rtsmono;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes.
constexpr int kFdSeeds = 20;
constexpr double kIdentityTol = 1e-6;
constexpr double kParallaxTolPx = 0.1;
constexpr double kRoundTripTol = 1e-6;
constexpr double kLossOracleTol = 1e-6;
constexpr int kMetricInstances = 1000;
constexpr double kMetricTol = 1e-9;
constexpr std::int64_t kParamsS = 3'500'000, kParamsXS = 2'800'000, kParamsDecoder = 300'000;
constexpr std::int64_t kTrainSteps = 2000;
constexpr double kLossRatioMax = 0.40;
constexpr double kSpearmanMin = 0.8;
constexpr std::int64_t kDeterminismSteps = 50;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor<double> random_tensor(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

RegionPair<double> identity_region(std::int64_t n, std::int64_t h, std::int64_t w) {
  Tensor<double> g({n, h, w, 2});
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        g.at({b, y, x, 0}) = static_cast<double>(x);
        g.at({b, y, x, 1}) = static_cast<double>(y);
      }
    }
  }
  return {g, g};
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome gradients() {
  const auto& cases = rtsmono::testing::op_fd_cases();
  int failures = 0;
  double worst = 0;
  std::int64_t checked = 0, kinks = 0;
  std::string worst_name;
  for (std::uint64_t seed = 0; seed < kFdSeeds; ++seed) {
    for (const auto& c : cases) {
      const auto r = c.run(seed);
      checked += r.checked, kinks += r.kinks;
      if (!r.ok()) {
        ++failures;
        spdlog::error("fd {} seed {}: max rel {:.3e} at {}", c.name, seed, r.max_rel, r.worst);
      }
      if (r.max_rel > worst) worst = r.max_rel, worst_name = c.name;
    }
    const auto r = rtsmono::testing::composed_loss_fd(seed, 1);
    checked += r.checked, kinks += r.kinks;
    if (!r.ok()) {
      ++failures;
      spdlog::error("fd composed loss seed {}: max rel {:.3e} at {}", seed, r.max_rel, r.worst);
    }
    if (r.max_rel > worst) worst = r.max_rel, worst_name = "composed loss";
  }
  return {failures == 0,
          fmt("%zu ops + composed loss x %d seeds, %d failures, worst rel %.2e (%s), %lld coords checked, %lld "
              "skipped at kinks",
              cases.size(), kFdSeeds, failures, worst, worst_name.c_str(), static_cast<long long>(checked),
              static_cast<long long>(kinks))};
}

// ---------------------------------------------------------------------------
// 2. Geometry

double estimate_shift(const Tensor<float>& f0, const Tensor<float>& f1) {
  const std::int64_t H = f0.dim(1), W = f0.dim(2);
  double best = 0, best_err = 1e300;
  for (int k = 0; k <= 1000; ++k) {
    const double shift = k * 0.01;
    double err = 0;
    for (std::int64_t y = 8; y < H - 8; y += 2) {
      for (std::int64_t x = 8; x < W - 24; ++x) {
        const double xs = static_cast<double>(x) + shift;
        const auto x0 = static_cast<std::int64_t>(std::floor(xs));
        const double f = xs - static_cast<double>(x0);
        const double ref = (1 - f) * f0[y * W + x0] + f * f0[y * W + x0 + 1];
        const double d = f1[y * W + x] - ref;
        err += d * d;
      }
    }
    if (err < best_err) best_err = err, best = shift;
  }
  return best;
}

Outcome geometry() {
  std::ostringstream detail;
  bool pass = true;

  double id_err = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Intrinsics k{rng.uniform(20, 40), rng.uniform(20, 40), 15.5, 11.5, 32, 24};
    const Tensor<double> src = random_tensor({2, 3, 24, 32}, rng, 0, 1);
    const auto v = synthesize_view(Var<double>(src), Var<double>(random_tensor({2, 1, 24, 32}, rng, 0.5, 80)),
                                   RigidTransform<double>::identity(2), k);
    for (std::int64_t i = 0; i < src.size(); ++i) id_err = std::max(id_err, std::abs(v.image.value()[i] - src[i]));
  }
  pass &= id_err <= kIdentityTol;
  detail << fmt("identity max err %.1e", id_err);

  // Textured fronto-parallel plane, camera translated along x.
  SceneSpec plane;
  plane.name = "plane";
  plane.K = default_intrinsics(320, 96);
  plane.planes.push_back({{0, 0, 6.0}, {0, 0, -1}, 0, 0, 5});
  const double t = 0.15, z = 6.0;
  for (int f = 0; f < 2; ++f) {
    PoseSE3 p;
    p.translation = {t * f, 0, 0};
    plane.camera_to_world.push_back(p);
  }
  const RenderedFrame r0 = render_frame(plane, 0), r1 = render_frame(plane, 1);
  const double expected = plane.K.fx * t / z;
  double worst_px = 0;
  for (std::int64_t c = 0; c < 3; ++c) {
    const std::int64_t n = 96 * 320;
    Tensor<float> a({1, 96, 320}), b({1, 96, 320});
    std::copy(r0.image.ptr() + c * n, r0.image.ptr() + (c + 1) * n, a.ptr());
    std::copy(r1.image.ptr() + c * n, r1.image.ptr() + (c + 1) * n, b.ptr());
    worst_px = std::max(worst_px, std::abs(estimate_shift(a, b) - expected));
  }
  // The projection itself must reproduce the same displacement.
  PoseSE3 rel;
  rel.translation = {-t, 0, 0};
  const auto proj = project(backproject(Var<double>(Tensor<double>({1, 1, 96, 320}, z)), plane.K), plane.K,
                            RigidTransform<double>::from_poses({rel}));
  double proj_err = 0;
  for (std::int64_t y = 0; y < 96; ++y) {
    for (std::int64_t x = 0; x < 320; ++x) {
      proj_err = std::max(proj_err, std::abs(static_cast<double>(x) - proj.grid.value().at({0, y, x, 0}) - expected));
    }
  }
  pass &= worst_px <= kParallaxTolPx && proj_err <= kParallaxTolPx;
  detail << fmt(", parallax %.3f px: rendered err %.3f px, projected err %.1e px", expected, worst_px, proj_err);

  double rt_err = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const Intrinsics k{rng.uniform(10, 30), rng.uniform(10, 30), rng.uniform(4, 8), rng.uniform(3, 6), 13, 9};
    const auto p = project(backproject(Var<double>(random_tensor({2, 1, 9, 13}, rng, 0.5, 80)), k), k,
                           RigidTransform<double>::identity(2));
    for (std::int64_t b = 0; b < 2; ++b) {
      for (std::int64_t y = 0; y < 9; ++y) {
        for (std::int64_t x = 0; x < 13; ++x) {
          rt_err = std::max(rt_err, std::abs(p.grid.value().at({b, y, x, 0}) - static_cast<double>(x)));
          rt_err = std::max(rt_err, std::abs(p.grid.value().at({b, y, x, 1}) - static_cast<double>(y)));
        }
      }
    }
  }
  pass &= rt_err <= kRoundTripTol;
  detail << fmt(", round trip max err %.1e", rt_err);
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Loss oracles

Outcome loss_oracles() {
  const LossWeights w;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::int64_t h = 2 + static_cast<std::int64_t>(rng.below(3)), wd = 2 + static_cast<std::int64_t>(rng.below(3));
    const Tensor<double> target = random_tensor({1, 3, h, wd}, rng, 0, 1);
    const Tensor<double> a = random_tensor({1, 3, h, wd}, rng, 0, 1), b = random_tensor({1, 3, h, wd}, rng, 0, 1);
    Tensor<double> va({1, 1, h, wd}, 1.0), vb({1, 1, h, wd}, 1.0);
    va[0] = 0;
    vb[static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h * wd)))] = 0;
    const double lp = photometric_loss<double>(Var<double>(target), {{Var<double>(a), va}, {Var<double>(b), vb}}, w).item();
    worst = std::max(worst, std::abs(lp - oracle::photometric_loss(target, {a, b}, {va, vb}, w)));

    const Tensor<double> disp = random_tensor({1, 1, h, wd}, rng, 0.05, 1);
    const double ls = smoothness_loss(Var<double>(disp), Var<double>(target)).item();
    worst = std::max(worst, std::abs(ls - oracle::smoothness_loss(disp, target)));

    const Tensor<double> dl = random_tensor({1, 1, h, wd}, rng, 1, 10), dm = random_tensor({1, 1, h, wd}, rng, 1, 10),
                         dh = random_tensor({1, 1, h, wd}, rng, 1, 10);
    const auto r = identity_region(1, h, wd);
    const double ld =
        cross_scale_consistency_loss<double>({Var<double>(dl), Var<double>(dm), Var<double>(dh), r, r}, w).item();
    double mean_m = 0;
    for (double v : dm.data()) mean_m += v;
    mean_m /= static_cast<double>(dm.size());
    worst = std::max(worst, std::abs(ld - oracle::cross_scale_loss(dl, dm, dm, dh, mean_m, w)));

    LossWeights tw;
    tw.beta = rng.uniform(0, 0.1);
    tw.lambda = rng.uniform(0, 2);
    const double tot = total_loss(Var<double>(Tensor<double>({1}, lp)), Var<double>(Tensor<double>({1}, ls)),
                                  Var<double>(Tensor<double>({1}, ld)), tw)
                           .item();
    worst = std::max(worst, std::abs(tot - (tw.gamma * lp + tw.beta * ls + tw.lambda * ld)));
  }

  // Degenerate cases: exact reconstruction, constant disparity, agreeing scales.
  Rng rng(999);
  const Tensor<double> img = random_tensor({1, 3, 4, 4}, rng, 0, 1);
  const double lp0 =
      photometric_loss<double>(Var<double>(img), {{Var<double>(img), Tensor<double>({1, 1, 4, 4}, 1.0)}}, w).item();
  const double ls0 = smoothness_loss(Var<double>(Tensor<double>({1, 1, 4, 4}, 0.3)), Var<double>(img)).item();
  const Tensor<double> d = random_tensor({1, 1, 4, 4}, rng, 1, 10);
  const auto r = identity_region(1, 4, 4);
  const double ld0 =
      cross_scale_consistency_loss<double>({Var<double>(d), Var<double>(d), Var<double>(d), r, r}, w).item();
  const bool zeros = lp0 == 0.0 && ls0 == 0.0 && ld0 == 0.0;
  return {worst <= kLossOracleTol && zeros,
          fmt("50 instances <= 4x4, max |diff| %.1e; degenerate L_p %g L_s %g L_d %g", worst, lp0, ls0, ld0)};
}

// ---------------------------------------------------------------------------
// 4. Metrics oracle

double max_report_diff(const MetricsReport& a, const MetricsReport& b) {
  const double d[] = {a.abs_rel - b.abs_rel, a.sq_rel - b.sq_rel, a.rmse - b.rmse, a.rmse_log - b.rmse_log,
                      a.a1 - b.a1,           a.a2 - b.a2,         a.a3 - b.a3};
  double m = a.n_valid == b.n_valid ? 0.0 : 1e300;
  for (double v : d) m = std::max(m, std::abs(v));
  return m;
}

// Relative form for comparisons where float rounding of the inputs is expected.
double max_report_rel_diff(const MetricsReport& a, const MetricsReport& b) {
  const std::pair<double, double> d[] = {{a.abs_rel, b.abs_rel}, {a.sq_rel, b.sq_rel}, {a.rmse, b.rmse},
                                         {a.rmse_log, b.rmse_log}, {a.a1, b.a1},         {a.a2, b.a2},
                                         {a.a3, b.a3}};
  double m = a.n_valid == b.n_valid ? 0.0 : 1e300;
  for (const auto& [x, y] : d) m = std::max(m, std::abs(x - y) / std::max(1.0, std::abs(y)));
  return m;
}

Outcome metrics_oracle() {
  double worst = 0, scale_exact = 0, scale_any = 0;
  for (std::uint64_t seed = 0; seed < kMetricInstances; ++seed) {
    Rng rng(seed);
    Tensor<float> gt({100}), pred({100});
    for (auto& v : gt.data()) v = static_cast<float>(rng.uniform(-5, 90));
    for (auto& v : pred.data()) v = static_cast<float>(rng.uniform(0.0005, 100));
    const std::vector<double> g(gt.data().begin(), gt.data().end()), p(pred.data().begin(), pred.data().end());
    for (bool ms : {false, true}) {
      worst = std::max(worst, max_report_diff(compute_metrics(pred, gt, 80, ms), oracle::metrics(p, g, 80, ms)));
    }
    const MetricsReport base = compute_metrics(pred, gt, 80, true);
    for (float c : {0.25f, 2.0f, 8.0f}) {
      Tensor<float> scaled = pred;
      for (auto& v : scaled.data()) v *= c;
      scale_exact = std::max(scale_exact, max_report_diff(compute_metrics(scaled, gt, 80, true), base));
    }
    Tensor<float> scaled = pred;
    const auto c = static_cast<float>(rng.uniform(0.1, 10));
    for (auto& v : scaled.data()) v *= c;
    // c * pred is rounded to float, so only agreement to rounding level is possible.
    scale_any = std::max(scale_any, max_report_rel_diff(compute_metrics(scaled, gt, 80, true), base));
  }
  return {worst <= kMetricTol && scale_exact == 0.0 && scale_any <= 1e-6,
          fmt("%d instances, max |diff| %.1e; median-scale invariance: power-of-two c diff %g, arbitrary c rel diff %.1e",
              kMetricInstances, worst, scale_exact, scale_any)};
}

// ---------------------------------------------------------------------------
// 5. Shapes

Outcome shapes() {
  NoGradGuard guard;
  bool pass = true;
  std::ostringstream detail;
  struct Case {
    Variant v;
    int w, h;
    Shape f0, f2, f3;
  };
  const Case cases[] = {{Variant::S, 640, 192, {1, 48, 48, 160}, {1, 80, 24, 80}, {1, 128, 12, 40}},
                        {Variant::S, 1024, 320, {1, 48, 80, 256}, {1, 80, 40, 128}, {1, 128, 20, 64}}};
  for (const auto& c : cases) {
    const DepthNet<float> net(ModelConfig::preset(c.v, c.w, c.h), 0);
    Rng rng(1);
    Tensor<float> img({1, 3, c.h, c.w});
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
    const auto p = net.encode(Var<float>(img));
    const bool pyramid = p.f0.shape() == c.f0 && p.f1.shape() == c.f0 && p.f2.shape() == c.f2 && p.f3.shape() == c.f3;
    const auto d = net.decode(p);
    bool range = d.shape() == Shape{1, 1, c.h, c.w};
    for (float v : d.value().data()) range &= v > 0.0f && v < 1.0f;
    pass &= pyramid && range;
    detail << fmt("%dx%d pyramid %s %s %s %s, disparity %s in (0,1) %s; ", c.w, c.h, shape_string(p.f0.shape()).c_str(),
                  shape_string(p.f1.shape()).c_str(), shape_string(p.f2.shape()).c_str(),
                  shape_string(p.f3.shape()).c_str(), shape_string(d.shape()).c_str(), range ? "yes" : "no");
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 6. Parameter budget

Outcome budgets() {
  const DepthNet<float> s(ModelConfig::preset(Variant::S), 0), xs(ModelConfig::preset(Variant::XS), 0);
  const std::int64_t ns = s.parameters().count(), nxs = xs.parameters().count();
  const std::int64_t dec = std::max(s.decoder_parameter_count(), xs.decoder_parameter_count());
  return {ns <= kParamsS && nxs <= kParamsXS && dec <= kParamsDecoder,
          fmt("S %lld (<= %lld), XS %lld (<= %lld), decoder %lld (<= %lld)", static_cast<long long>(ns),
              static_cast<long long>(kParamsS), static_cast<long long>(nxs), static_cast<long long>(kParamsXS),
              static_cast<long long>(dec), static_cast<long long>(kParamsDecoder))};
}

// ---------------------------------------------------------------------------
// 7. Desk-scale convergence

TrainConfig desk_config(std::int64_t steps) {
  TrainConfig cfg = TrainConfig::read(RTSMONO_DESK_CONFIG);
  cfg.total_steps = steps;
  cfg.checkpoint_every = 0;
  cfg.log_every = 100;
  return cfg;
}

fs::path desk_dataset(const fs::path& work) {
  const fs::path root = work / "desk_data";
  if (!fs::exists(root / "complete")) {
    fs::remove_all(root);
    for (std::uint64_t s : {1, 2, 3}) generate_scene(make_random_scene(s, 20, 320, 96), root);
    std::ofstream(root / "complete") << "ok\n";
  }
  return root;
}

double window_mean(const std::vector<StepStats>& h, std::int64_t lo, std::int64_t hi) {
  double s = 0;
  int n = 0;
  for (const auto& st : h) {
    if (st.step >= lo && st.step <= hi) s += st.total, ++n;
  }
  return n ? s / n : std::nan("");
}

Outcome convergence(const fs::path& work) {
  const fs::path data = desk_dataset(work);
  const TrainConfig cfg = desk_config(kTrainSteps);
  const fs::path out = work / "desk_run";
  fs::remove_all(out);
  const auto history = run_training(cfg, {data, out, {}, {}, {}});
  const double early = window_mean(history, 10, 110), late = window_mean(history, 1900, 2000);
  const double ratio = late / early;

  // Held-out frames from scenes never seen in training, median-scaled before ranking.
  const auto trainer = Trainer::load(out / "last.bin");
  std::vector<double> rhos;
  std::ostringstream per_frame;
  for (std::uint64_t seed : {97, 98, 99}) {
    const SceneSpec spec = make_random_scene(seed, 6, cfg.width, cfg.height);
    const RenderedFrame f = render_frame(spec, 3);
    NoGradGuard guard;
    const auto disp = trainer->depth().forward(Var<float>(f.image.reshaped({1, 3, cfg.height, cfg.width})));
    const Tensor<float> depth = disp_to_depth(disp, 0.1, 100.0).value();
    std::vector<double> p, g;
    for (std::int64_t i = 0; i < f.depth.size(); ++i) {
      if (f.depth[i] > 0 && f.depth[i] <= 80) p.push_back(depth[i]), g.push_back(f.depth[i]);
    }
    const double s = median(g) / median(p);
    for (auto& v : p) v *= s;
    rhos.push_back(oracle::spearman(p, g));
    per_frame << fmt(" %.3f", rhos.back());
  }
  const double rho = (rhos[0] + rhos[1] + rhos[2]) / 3.0;
  return {ratio <= kLossRatioMax && rho > kSpearmanMin,
          fmt("loss ratio %.3f (<= %.2f; %.4f -> %.4f), held-out Spearman mean %.3f (> %.1f; per frame%s)", ratio,
              kLossRatioMax, early, late, rho, kSpearmanMin, per_frame.str().c_str())};
}

// ---------------------------------------------------------------------------
// 9. Determinism

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const fs::path& work) {
  const fs::path data = desk_dataset(work);
  TrainConfig cfg = desk_config(kDeterminismSteps);
  cfg.checkpoint_every = 25;
  cfg.log_every = 0;
  const fs::path a = work / "det_a", b = work / "det_b", c = work / "det_resume";
  for (const auto& d : {a, b, c}) fs::remove_all(d);
  const auto ha = run_training(cfg, {data, a, {}, {}, {}});
  const auto hb = run_training(cfg, {data, b, {}, {}, {}});
  bool same = ha.size() == hb.size() && ha.size() == static_cast<std::size_t>(kDeterminismSteps);
  for (std::size_t i = 0; same && i < ha.size(); ++i) {
    same = ha[i].total == hb[i].total && ha[i].lp == hb[i].lp && ha[i].ld == hb[i].ld && ha[i].ls == hb[i].ls;
  }
  same = same && file_bytes(a / "last.bin") == file_bytes(b / "last.bin");

  const auto hr = run_training(cfg, {data, c, a / "ckpt_000025.bin", {}, {}});
  bool resume = hr.size() == 25;
  for (std::size_t i = 0; resume && i < hr.size(); ++i) resume = hr[i].total == ha[i + 25].total;
  resume = resume && file_bytes(c / "last.bin") == file_bytes(a / "last.bin");
  return {same && resume, fmt("50-step trajectories %s, resume from step 25 %s", same ? "bit-identical" : "DIFFER",
                              resume ? "bit-exact" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "rtsmono_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--only 1,2,...]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);
  spdlog::set_level(spdlog::level::warn);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    bool gated = true;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradients},
      {2, "geometry oracle", geometry},
      {3, "loss oracles", loss_oracles},
      {4, "metrics oracle", metrics_oracle},
      {5, "shape conformance", shapes},
      {6, "parameter budget", budgets},
      {7, "desk-scale convergence", [&] { return convergence(work); }},
      {8, "full-scale accuracy and embedded FPS",
       [] {
         return Outcome{true, "not reproducible at desk scale; replaced by criteria 1-7, bench reports local FPS"};
       },
       false},
      {9, "determinism", [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += c.gated && !o.pass;
    const char* tag = !c.gated ? "N/A " : o.pass ? "PASS" : "FAIL";
    std::printf("[%s] criterion %d %s: %s (%.1f s)\n", tag, c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%s: %d gated criteria failed\n", failed ? "FAILED" : "ALL PASSED", failed);
  return failed ? 1 : 0;
}
