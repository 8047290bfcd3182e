#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <string>

#include "rtsmono/autograd.hpp"
#include "rtsmono/tensor.hpp"

namespace rtsmono {

/// Pinhole intrinsics in pixel units. Pixel (u, v) has its centre at integer coordinates.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  /// Intrinsics for the same camera resampled to width x height.
  Intrinsics scaled_to(int new_width, int new_height) const;
  Eigen::Matrix3d matrix() const;

  /// Row-major 3x3 matrix, whitespace separated. Image size is not stored in the file.
  static Intrinsics read(const std::filesystem::path& path, int width, int height);
  void write(const std::filesystem::path& path) const;
};

/// Rigid transform p' = R p + t.
struct PoseSE3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static PoseSE3 identity() { return {}; }
  PoseSE3 inverse() const;
  PoseSE3 operator*(const PoseSE3& rhs) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  /// Throws unless R^T R = I and det R = +1 within tol.
  void validate(double tol = 1e-6) const;
};

/// Dense depth (meters) with clamp bounds.
struct DepthMap {
  Tensor<float> values;  // [H, W]
  double valid_min = 0.1;
  double valid_max = 100.0;

  int height() const { return static_cast<int>(values.dim(0)); }
  int width() const { return static_cast<int>(values.dim(1)); }
  void clamp_to_bounds();
};

/// Rodrigues rotation of (rx, ry, rz) plus translation (tx, ty, tz).
PoseSE3 axis_angle_to_se3(const std::array<double, 6>& params);

/// Near-plane distance below which projected points are flagged invalid.
inline constexpr double kNearPlane = 1e-3;

/// Batched differentiable rigid transform: rotation [N,3,3], translation [N,3].
template <typename T>
struct RigidTransform {
  Var<T> rotation;
  Var<T> translation;

  std::int64_t batch() const { return rotation.dim(0); }
  static RigidTransform identity(std::int64_t batch);
  static RigidTransform from_poses(const std::vector<PoseSE3>& poses);
};

/// Differentiable Rodrigues map of params [N,6] = (rx, ry, rz, tx, ty, tz).
template <typename T>
RigidTransform<T> axis_angle_to_se3(const Var<T>& params);

/// depth [N,1,H,W] -> camera-frame points [N,3,H,W] (channels X, Y, Z).
template <typename T>
Var<T> backproject(const Var<T>& depth, const Intrinsics& K);

template <typename T>
struct Projection {
  Var<T> grid;      // [N,H,W,2] source pixel coordinates (x, y)
  Tensor<T> valid;  // [N,1,H,W], 1 where the transformed point is in front of the camera
};

/// Transforms points by T, projects with K. Points with z <= kNearPlane map to pixel (0, 0)
/// and are flagged invalid.
template <typename T>
Projection<T> project(const Var<T>& points, const Intrinsics& K, const RigidTransform<T>& pose);

template <typename T>
struct SynthesizedView {
  Var<T> image;     // [N,C,H,W]
  Tensor<T> valid;  // [N,1,H,W]
};

/// Reconstructs the target frame by sampling `source` at proj(depth, pose, K).
template <typename T>
SynthesizedView<T> synthesize_view(const Var<T>& source, const Var<T>& depth,
                                   const RigidTransform<T>& pose, const Intrinsics& K);

}  // namespace rtsmono
