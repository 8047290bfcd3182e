#include "rtsmono/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "rtsmono/image_io.hpp"
#include "rtsmono/nn.hpp"
#include "rtsmono/ops.hpp"

namespace rtsmono {

namespace fs = std::filesystem;

fs::path frame_path(const fs::path& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof name, "%06d.png", index);
  return dir / "frames" / name;
}

fs::path depth_path(const fs::path& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof name, "%06d.pfm", index);
  return dir / "gt" / name;
}

void write_trajectory(const fs::path& path, const std::vector<PoseSE3>& poses) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory " + path.string());
  out.precision(17);
  for (std::size_t f = 0; f < poses.size(); ++f) {
    out << f;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << ' ' << poses[f].rotation(r, c);
    }
    for (int k = 0; k < 3; ++k) out << ' ' << poses[f].translation[k];
    out << '\n';
  }
}

std::vector<PoseSE3> read_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory " + path.string());
  std::map<int, PoseSE3> by_frame;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    int frame = 0;
    PoseSE3 p;
    bool ok = static_cast<bool>(ss >> frame);
    for (int r = 0; r < 3 && ok; ++r) {
      for (int c = 0; c < 3 && ok; ++c) ok = static_cast<bool>(ss >> p.rotation(r, c));
    }
    for (int k = 0; k < 3 && ok; ++k) ok = static_cast<bool>(ss >> p.translation[k]);
    if (!ok) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 13 numbers");
    by_frame[frame] = p;
  }
  std::vector<PoseSE3> out;
  for (const auto& [frame, p] : by_frame) {
    if (frame != static_cast<int>(out.size())) {
      throw std::runtime_error(path.string() + ": frames must be numbered 0..n-1 without gaps");
    }
    out.push_back(p);
  }
  return out;
}

std::vector<SplitEntry> read_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file " + path.string());
  std::vector<SplitEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    SplitEntry e;
    if (!(ss >> e.sequence)) continue;
    std::string extra;
    if (!(ss >> e.index) || e.index < 0 || (ss >> extra)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected '<sequence> <frame_index>'");
    }
    out.push_back(e);
  }
  return out;
}

void write_split(const fs::path& path, const std::vector<SplitEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split file " + path.string());
  for (const auto& e : entries) out << e.sequence << ' ' << e.index << '\n';
}

std::vector<SplitEntry> list_frames(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  std::vector<SplitEntry> out;
  std::vector<fs::path> seqs;
  for (const auto& d : fs::directory_iterator(root)) {
    if (d.is_directory() && fs::is_directory(d.path() / "frames")) seqs.push_back(d.path());
  }
  std::sort(seqs.begin(), seqs.end());
  for (const auto& s : seqs) {
    std::vector<int> idx;
    for (const auto& f : fs::directory_iterator(s / "frames")) {
      if (f.path().extension() != ".png") continue;
      try {
        idx.push_back(std::stoi(f.path().stem().string()));
      } catch (const std::exception&) {
      }
    }
    std::sort(idx.begin(), idx.end());
    for (int i : idx) out.push_back({s.filename().string(), i});
  }
  return out;
}

Dataset::Dataset(fs::path root, const std::vector<SplitEntry>& entries, DatasetOptions options)
    : root_(std::move(root)), options_(options) {
  if ((options_.width == 0) != (options_.height == 0) || options_.width < 0 || options_.height < 0) {
    throw std::invalid_argument("dataset: target width and height must both be set or both be zero");
  }
  for (const auto& e : entries) {
    const fs::path dir = root_ / e.sequence;
    if (!fs::exists(frame_path(dir, e.index))) {
      throw std::runtime_error("dataset: missing frame " + frame_path(dir, e.index).string());
    }
    if (e.index == 0 || !fs::exists(frame_path(dir, e.index - 1)) || !fs::exists(frame_path(dir, e.index + 1))) {
      spdlog::warn("skipping {} {}: no full triplet", e.sequence, e.index);
      continue;
    }
    entries_.push_back(e);
  }
}

Tensor<float> resize_image(const Tensor<float>& image, int width, int height) {
  if (image.rank() != 3) throw ShapeError("resize_image: expected [C,H,W], got " + shape_string(image.shape()));
  if (image.dim(1) == height && image.dim(2) == width) return image;
  NoGradGuard guard;
  const Var<float> x(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), false);
  return resize_bilinear(x, height, width).value().reshaped({image.dim(0), height, width});
}

FrameTriplet Dataset::load(std::size_t i) const {
  if (i >= entries_.size()) throw std::out_of_range("dataset index " + std::to_string(i));
  const SplitEntry& e = entries_[i];
  const fs::path dir = root_ / e.sequence;
  FrameTriplet t;
  t.entry = e;
  t.target = read_png(frame_path(dir, e.index));
  t.prev = read_png(frame_path(dir, e.index - 1));
  t.next = read_png(frame_path(dir, e.index + 1));
  if (t.prev.shape() != t.target.shape() || t.next.shape() != t.target.shape()) {
    throw std::runtime_error("dataset: frames around " + e.sequence + " " + std::to_string(e.index) +
                             " differ in resolution");
  }
  const int w = static_cast<int>(t.target.dim(2)), h = static_cast<int>(t.target.dim(1));
  t.K = Intrinsics::read(dir / "intrinsics.txt", w, h);
  if (options_.load_gt && fs::exists(depth_path(dir, e.index))) {
    DepthMap d;
    d.values = read_pfm(depth_path(dir, e.index));
    if (d.height() != h || d.width() != w) {
      throw std::runtime_error("dataset: depth map " + depth_path(dir, e.index).string() +
                               " does not match the frame size");
    }
    t.gt_depth = std::move(d);
  }
  if (options_.load_gt && fs::exists(dir / "poses.txt")) {
    const auto traj = read_trajectory(dir / "poses.txt");
    if (static_cast<std::size_t>(e.index + 1) < traj.size()) {
      const PoseSE3& tgt = traj[e.index];
      t.gt_poses = std::array<PoseSE3, 2>{traj[e.index - 1].inverse() * tgt, traj[e.index + 1].inverse() * tgt};
    }
  }
  if (options_.width > 0 && (options_.width != w || options_.height != h)) {
    t.target = resize_image(t.target, options_.width, options_.height);
    t.prev = resize_image(t.prev, options_.width, options_.height);
    t.next = resize_image(t.next, options_.width, options_.height);
    t.K = t.K.scaled_to(options_.width, options_.height);
  }
  return t;
}

std::vector<std::size_t> sample_indices(std::size_t n, int batch_size, std::uint64_t seed, std::int64_t step) {
  if (n == 0) throw std::invalid_argument("sample_indices: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("sample_indices: batch size must be >= 1");
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(step) * 0xbf58476d1ce4e5b9ULL + 1);
  std::vector<std::size_t> out;
  for (int b = 0; b < batch_size; ++b) out.push_back(static_cast<std::size_t>(rng.below(n)));
  return out;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, const AugmentOptions& aug,
                 std::uint64_t seed, std::int64_t step) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no indices");
  Rng rng(seed * 0xd6e8feb86659fd93ULL + static_cast<std::uint64_t>(step) + 7);
  Batch b;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    FrameTriplet t = data.load(indices[k]);
    if (k == 0) {
      const Shape s{static_cast<std::int64_t>(indices.size()), 3, t.target.dim(1), t.target.dim(2)};
      b.prev = Tensor<float>(s);
      b.target = Tensor<float>(s);
      b.next = Tensor<float>(s);
      b.K = t.K;
    } else if (t.target.dim(1) != b.target.dim(2) || t.target.dim(2) != b.target.dim(3) || t.K.fx != b.K.fx ||
               t.K.fy != b.K.fy || t.K.cx != b.K.cx || t.K.cy != b.K.cy) {
      throw std::runtime_error("make_batch: batch items differ in resolution or intrinsics");
    }
    const bool flip = aug.flip && rng.uniform() < 0.5;
    const double gain = aug.brightness > 0 ? rng.uniform(1.0 - aug.brightness, 1.0 + aug.brightness) : 1.0;
    const std::int64_t H = t.target.dim(1), W = t.target.dim(2), n = 3 * H * W;
    auto put = [&](const Tensor<float>& src, Tensor<float>& dst) {
      float* out = dst.ptr() + k * n;
      for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < H; ++y) {
          for (std::int64_t x = 0; x < W; ++x) {
            const float v = src[(c * H + y) * W + (flip ? W - 1 - x : x)];
            out[(c * H + y) * W + x] = gain == 1.0 ? v : std::clamp(static_cast<float>(v * gain), 0.0f, 1.0f);
          }
        }
      }
    };
    put(t.prev, b.prev);
    put(t.target, b.target);
    put(t.next, b.next);
    b.entries.push_back(t.entry);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Cross-scale inputs

std::array<ScaleMap, 2> multi_scale_maps(int width, int height, const MultiScaleConfig& cfg) {
  if (width % 16 != 0 || height % 16 != 0 || width < 16 || height < 16) {
    throw std::invalid_argument("multi_scale_inputs: resolution " + std::to_string(width) + "x" +
                                std::to_string(height) + " must be divisible by 16");
  }
  if (!(cfg.low_scale > 0 && cfg.low_scale < 1) || !(cfg.high_area > 0 && cfg.high_area < 1)) {
    throw std::invalid_argument("multi_scale_inputs: scale factors must lie in (0, 1)");
  }
  const int wpre = static_cast<int>(std::lround(width * cfg.low_scale));
  const int hpre = static_cast<int>(std::lround(height * cfg.low_scale));
  const int wl = wpre / 16 * 16, hl = hpre / 16 * 16;
  if (wl < 16 || hl < 16) {
    throw std::invalid_argument("multi_scale_inputs: resolution " + std::to_string(width) + "x" +
                                std::to_string(height) + " too small for a divisible low scale");
  }
  ScaleMap low;
  low.width = wl;
  low.height = hl;
  low.sx = static_cast<double>(width) / wpre;
  low.sy = static_cast<double>(height) / hpre;
  low.ox = ((wpre - wl) / 2 + 0.5) * low.sx - 0.5;
  low.oy = ((hpre - hl) / 2 + 0.5) * low.sy - 0.5;

  const double r = std::sqrt(cfg.high_area);
  ScaleMap high;
  high.width = width;
  high.height = height;
  high.sx = high.sy = r;
  high.ox = 0.5 * width * (1 - r) + 0.5 * r - 0.5;
  high.oy = 0.5 * height * (1 - r) + 0.5 * r - 0.5;
  return {low, high};
}

namespace {

template <typename T>
Tensor<T> lattice_grid(std::int64_t n, const ScaleMap& m, bool to_mid) {
  Tensor<T> g({n, m.height, m.width, 2});
  const std::int64_t plane = static_cast<std::int64_t>(m.height) * m.width * 2;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const auto p = to_mid ? m.to_mid(x, y) : std::array<double, 2>{double(x), double(y)};
      const std::int64_t i = (static_cast<std::int64_t>(y) * m.width + x) * 2;
      g[i] = static_cast<T>(p[0]);
      g[i + 1] = static_cast<T>(p[1]);
    }
  }
  for (std::int64_t b = 1; b < n; ++b) std::copy(g.ptr(), g.ptr() + plane, g.ptr() + b * plane);
  return g;
}

}  // namespace

template <typename T>
MultiScaleInputs<T> multi_scale_inputs(const Var<T>& image, const MultiScaleConfig& cfg) {
  if (image.rank() != 4) throw ShapeError("multi_scale_inputs: expected [N,C,H,W], got " + shape_string(image.shape()));
  const auto [low, high] = multi_scale_maps(static_cast<int>(image.dim(3)), static_cast<int>(image.dim(2)), cfg);
  const std::int64_t n = image.dim(0);
  MultiScaleInputs<T> out;
  out.mid = image;
  out.low_map = low;
  out.high_map = high;
  out.lm = {lattice_grid<T>(n, low, false), lattice_grid<T>(n, low, true)};
  out.mh = {lattice_grid<T>(n, high, true), lattice_grid<T>(n, high, false)};
  out.low = bilinear_sample(image, constant(out.lm.grid_b));
  out.high = bilinear_sample(image, constant(out.mh.grid_a));
  return out;
}

template MultiScaleInputs<float> multi_scale_inputs<float>(const Var<float>&, const MultiScaleConfig&);
template MultiScaleInputs<double> multi_scale_inputs<double>(const Var<double>&, const MultiScaleConfig&);

}  // namespace rtsmono
