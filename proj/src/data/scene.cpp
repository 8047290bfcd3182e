#include "rtsmono/scene.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "rtsmono/dataset.hpp"
#include "rtsmono/image_io.hpp"
#include "rtsmono/nn.hpp"

namespace rtsmono {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

double lattice(std::int64_t i, std::int64_t j, std::uint64_t seed) {
  const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL ^
                                         mix(static_cast<std::uint64_t>(j) + 0x632be59bd9b4e019ULL)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double noise_octave(double u, double v, std::uint64_t seed) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto i = static_cast<std::int64_t>(fu), j = static_cast<std::int64_t>(fv);
  const double tu = smooth(u - fu), tv = smooth(v - fv);
  const double a = lattice(i, j, seed), b = lattice(i + 1, j, seed);
  const double c = lattice(i, j + 1, seed), d = lattice(i + 1, j + 1, seed);
  return (a + (b - a) * tu) * (1 - tv) + (c + (d - c) * tu) * tv;
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  double u = 0, v = 0;  // surface texture coordinates in meters
  std::uint64_t seed = 0;
};

void plane_axes(const Eigen::Vector3d& n, Eigen::Vector3d& a, Eigen::Vector3d& b) {
  const Eigen::Vector3d ref = std::abs(n.y()) < 0.9 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitX();
  a = n.cross(ref).normalized();
  b = n.cross(a);
}

void intersect_plane(const ScenePlane& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit& hit) {
  const Eigen::Vector3d n = p.normal.normalized();
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-12) return;
  const double t = n.dot(p.point - o) / denom;
  if (!(t > 0) || t >= hit.t) return;
  Eigen::Vector3d a, b;
  plane_axes(n, a, b);
  const Eigen::Vector3d rel = o + t * d - p.point;
  const double u = rel.dot(a), v = rel.dot(b);
  if (p.half_u > 0 && std::abs(u) > p.half_u) return;
  if (p.half_v > 0 && std::abs(v) > p.half_v) return;
  hit = {t, u, v, p.texture_seed};
}

bool inside_box(const SceneBox& b, const Eigen::Vector3d& p) {
  return ((p - b.center).cwiseAbs().array() < b.half_size.array()).all();
}

void intersect_box(const SceneBox& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit& hit) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int k = 0; k < 3; ++k) {
    const double lo = b.center[k] - b.half_size[k], hi = b.center[k] + b.half_size[k];
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < lo || o[k] > hi) return;
      continue;
    }
    double ta = (lo - o[k]) / d[k], tb = (hi - o[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = k;
    }
    t1 = std::min(t1, tb);
  }
  if (axis < 0 || t0 > t1 || !(t0 > 0) || t0 >= hit.t) return;
  const Eigen::Vector3d p = o + t0 * d;
  const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
  hit = {t0, p[ua], p[va], b.texture_seed * 6 + static_cast<std::uint64_t>(axis)};
}

Hit cast(const SceneSpec& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  Hit hit;
  for (const auto& p : s.planes) intersect_plane(p, o, d, hit);
  for (const auto& b : s.boxes) intersect_box(b, o, d, hit);
  return hit;
}

}  // namespace

double value_noise(double u, double v, std::uint64_t seed) {
  double acc = 0, amp = 0.5, norm = 0, f = 1.0;
  for (int o = 0; o < 3; ++o) {
    acc += amp * noise_octave(u * f + 17.3 * o, v * f - 9.1 * o, mix(seed + static_cast<std::uint64_t>(o)));
    norm += amp;
    amp *= 0.5;
    f *= 2.0;
  }
  return acc / norm;
}

void SceneSpec::validate() const {
  K.validate();
  if (camera_to_world.empty()) throw std::invalid_argument("scene " + name + ": no camera poses");
  if (planes.empty() && boxes.empty()) throw std::invalid_argument("scene " + name + ": no geometry");
  if (!(dmin > 0) || !(dmin < dmax)) throw std::invalid_argument("scene " + name + ": need 0 < dmin < dmax");
  if (!(texture_frequency > 0)) throw std::invalid_argument("scene " + name + ": texture frequency must be > 0");
  for (const auto& p : planes) {
    if (!(p.normal.norm() > 1e-9)) throw std::invalid_argument("scene " + name + ": plane with zero normal");
    if (p.half_u < 0 || p.half_v < 0) throw std::invalid_argument("scene " + name + ": negative plane extent");
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!(boxes[i].half_size.array() > 0).all()) {
      throw std::invalid_argument("scene " + name + ": box " + std::to_string(i) + " has non-positive size");
    }
  }
  for (int f = 0; f < frame_count(); ++f) {
    camera_to_world[f].validate();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (inside_box(boxes[i], camera_to_world[f].translation)) {
        throw std::invalid_argument("scene " + name + ": camera " + std::to_string(f) + " is inside box " +
                                    std::to_string(i));
      }
    }
  }
}

Intrinsics default_intrinsics(int width, int height) {
  return {0.58 * width, 1.92 * height, 0.5 * (width - 1), 0.5 * (height - 1), width, height};
}

SceneSpec make_random_scene(std::uint64_t seed, int frames, int width, int height) {
  Rng rng(mix(seed + 0x5eed));
  SceneSpec s;
  char name[32];
  std::snprintf(name, sizeof name, "scene_%03llu", static_cast<unsigned long long>(seed));
  s.name = name;
  s.K = default_intrinsics(width, height);

  const double ground = rng.uniform(1.4, 1.7);
  const double left = -rng.uniform(3.0, 5.0), right = rng.uniform(3.0, 5.0);
  const double far = rng.uniform(30.0, 45.0);
  std::uint64_t tex = seed * 1000;
  s.planes.push_back({{0, ground, 0}, {0, -1, 0}, 0, 0, ++tex});
  s.planes.push_back({{left, 0, 0}, {1, 0, 0}, 0, 0, ++tex});
  s.planes.push_back({{right, 0, 0}, {-1, 0, 0}, 0, 0, ++tex});
  s.planes.push_back({{0, 0, far}, {0, 0, -1}, 0, 0, ++tex});

  const int n_boxes = 3 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_boxes; ++i) {
    const Eigen::Vector3d half(rng.uniform(0.3, 0.8), rng.uniform(0.4, 1.0), rng.uniform(0.3, 0.8));
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double limit = side < 0 ? -left : right;
    const double x = side * std::min(rng.uniform(half.x() + 0.6, half.x() + 2.0), limit - half.x() * 0.5);
    const double z = rng.uniform(4.0, far - 8.0);
    s.boxes.push_back({{x, ground - half.y(), z}, half, ++tex});
  }

  const double speed = rng.uniform(0.25, 0.4);
  const double sway = rng.uniform(0.05, 0.2);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double yaw_amp = rng.uniform(0.0, 0.03);
  for (int f = 0; f < frames; ++f) {
    PoseSE3 p;
    const double a = phase + 0.35 * f;
    const double yaw = yaw_amp * std::sin(a);
    p.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
    p.translation = {sway * std::sin(a), 0.0, speed * f};
    s.camera_to_world.push_back(p);
  }
  return s;
}

RenderedFrame render_frame(const SceneSpec& spec, int frame) {
  if (frame < 0 || frame >= spec.frame_count()) {
    throw std::out_of_range("render_frame: frame " + std::to_string(frame) + " outside scene " + spec.name);
  }
  const auto& K = spec.K;
  const int W = K.width, H = K.height;
  const PoseSE3& pose = spec.camera_to_world[frame];
  const Eigen::Vector3d origin = pose.translation;
  RenderedFrame out{Tensor<float>({3, H, W}), Tensor<float>({H, W}), 0};
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  static constexpr double kSub[2] = {-0.25, 0.25};
  std::int64_t covered = 0;

  auto shade = [&](const Hit& h, int c) {
    const double f = spec.texture_frequency;
    return 0.1 + 0.8 * value_noise(h.u * f, h.v * f, h.seed * 3 + static_cast<std::uint64_t>(c));
  };
  auto ray = [&](double px, double py) {
    const Eigen::Vector3d cam((px - K.cx) / K.fx, (py - K.cy) / K.fy, 1.0);
    return Eigen::Vector3d(pose.rotation * cam);
  };

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
      // The camera-frame ray has unit z, so the ray parameter is the depth.
      const Hit centre = cast(spec, origin, ray(x, y));
      const bool valid = std::isfinite(centre.t) && centre.t > spec.dmin && centre.t < spec.dmax;
      out.depth[i] = valid ? static_cast<float>(centre.t) : 0.0f;
      covered += valid;
      double rgb[3] = {0, 0, 0};
      for (double sy : kSub) {
        for (double sx : kSub) {
          const Hit h = cast(spec, origin, ray(x + sx, y + sy));
          for (int c = 0; c < 3; ++c) rgb[c] += std::isfinite(h.t) ? shade(h, c) : 0.0;
        }
      }
      for (int c = 0; c < 3; ++c) out.image[c * plane + i] = static_cast<float>(rgb[c] / 4.0);
    }
  }
  out.coverage = static_cast<double>(covered) / static_cast<double>(plane);
  return out;
}

void generate_scene(const SceneSpec& spec, const std::filesystem::path& out) {
  spec.validate();
  std::vector<RenderedFrame> frames;
  for (int f = 0; f < spec.frame_count(); ++f) {
    frames.push_back(render_frame(spec, f));
    if (frames.back().coverage < spec.min_coverage) {
      throw std::invalid_argument("scene " + spec.name + ": frame " + std::to_string(f) + " coverage " +
                                  std::to_string(frames.back().coverage) + " below " +
                                  std::to_string(spec.min_coverage));
    }
  }
  const auto dir = out / spec.name;
  std::filesystem::create_directories(dir / "frames");
  std::filesystem::create_directories(dir / "gt");
  spec.K.write(dir / "intrinsics.txt");
  write_trajectory(dir / "poses.txt", spec.camera_to_world);
  for (int f = 0; f < spec.frame_count(); ++f) {
    write_png(frame_path(dir, f), frames[f].image);
    write_pfm(depth_path(dir, f), frames[f].depth);
  }
  spdlog::debug("wrote scene {} ({} frames)", spec.name, spec.frame_count());
}

}  // namespace rtsmono
