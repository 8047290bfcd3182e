#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rtsmono/camera.hpp"

namespace rtsmono {

/// Textured plane through `point` with unit `normal`. Zero half extents mean unbounded.
struct ScenePlane {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double half_u = 0;
  double half_v = 0;
  std::uint64_t texture_seed = 0;
};

/// Axis-aligned textured box.
struct SceneBox {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_size = Eigen::Vector3d::Ones();
  std::uint64_t texture_seed = 0;
};

struct SceneSpec {
  std::string name = "scene";
  std::vector<ScenePlane> planes;
  std::vector<SceneBox> boxes;
  std::vector<PoseSE3> camera_to_world;  // one per frame
  Intrinsics K;
  double texture_frequency = 0.8;  // base noise cycles per meter
  double dmin = 0.1;
  double dmax = 100.0;
  double min_coverage = 0.8;

  int frame_count() const { return static_cast<int>(camera_to_world.size()); }
  /// Rejects malformed planes, cameras inside a box and inconsistent intrinsics.
  void validate() const;
};

struct RenderedFrame {
  Tensor<float> image;  // [3,H,W] in [0,1]
  Tensor<float> depth;  // [H,W], 0 where no surface within (dmin, dmax)
  double coverage = 0;  // fraction of pixels with valid depth
};

/// Default intrinsics for a width x height render (KITTI-like field of view).
Intrinsics default_intrinsics(int width, int height);

/// Street-like scene: ground, two side walls, a far wall and boxes along a forward
/// camera path with gentle sway. Fully determined by the seed.
SceneSpec make_random_scene(std::uint64_t seed, int frames, int width, int height);

/// Ray-cast render with 2x2 supersampled colour and centre-ray depth.
RenderedFrame render_frame(const SceneSpec& spec, int frame);

/// Writes frames, intrinsics, gt depth and the trajectory under out/<spec.name>.
/// Rejects the scene before writing if any frame has insufficient coverage.
void generate_scene(const SceneSpec& spec, const std::filesystem::path& out);

/// Smooth multi-octave value noise in [0, 1).
double value_noise(double u, double v, std::uint64_t seed);

}  // namespace rtsmono
