#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtsmono/camera.hpp"
#include "rtsmono/nn.hpp"

namespace rtsmono {

struct PoseNetConfig {
  std::vector<std::int64_t> widths{16, 32, 64, 128, 256, 256, 256};  // stride-2 3x3 convs
  double output_scale = 0.01;

  /// Narrower stack for the desk model preset.
  static PoseNetConfig compact();
  /// Smallest stack, paired with the test model preset.
  static PoseNetConfig tiny();
  void validate() const;
};

/// Relative pose regressor over channel-concatenated (target, source) images.
template <typename T>
class PoseNet {
 public:
  PoseNet(const PoseNetConfig& cfg, std::uint64_t seed);

  const PoseNetConfig& config() const { return cfg_; }
  ParameterList<T>& parameters() { return params_; }
  const ParameterList<T>& parameters() const { return params_; }
  std::int64_t parameter_count() const { return params_.count("pose/"); }

  /// Scaled axis-angle and translation [N,6].
  Var<T> regress(const Var<T>& target, const Var<T>& source) const;
  /// Transform taking target-frame points into the source frame.
  RigidTransform<T> operator()(const Var<T>& target, const Var<T>& source) const {
    return axis_angle_to_se3(regress(target, source));
  }

  const Conv2d<T>& head() const { return head_; }

 private:
  PoseNetConfig cfg_;
  ParameterList<T> params_;
  std::vector<Conv2d<T>> convs_;
  Conv2d<T> head_;
};

/// Single-pair convenience returning a plain pose.
PoseSE3 estimate_pose(const PoseNet<float>& net, const Tensor<float>& target, const Tensor<float>& source);

}  // namespace rtsmono
