#include "rtsmono/pose_net.hpp"

#include <stdexcept>

#include "rtsmono/ops.hpp"

namespace rtsmono {

PoseNetConfig PoseNetConfig::compact() {
  PoseNetConfig c;
  c.widths = {8, 16, 32, 32, 64, 64, 64};
  return c;
}

PoseNetConfig PoseNetConfig::tiny() {
  PoseNetConfig c;
  c.widths = {4, 8, 8, 8, 8, 8, 8};
  return c;
}

void PoseNetConfig::validate() const {
  if (widths.empty()) throw std::invalid_argument("pose config: need at least one conv layer");
  for (auto w : widths) {
    if (w <= 0) throw std::invalid_argument("pose config: conv widths must be positive");
  }
  if (!(output_scale > 0)) throw std::invalid_argument("pose config: output scale must be > 0");
}

template <typename T>
PoseNet<T>::PoseNet(const PoseNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  std::int64_t in = 6;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    convs_.push_back(Conv2d<T>::create(params_, "pose/conv" + std::to_string(i),
                                       ConvSpec::square(in, cfg_.widths[i], 3, 2), rng));
    in = cfg_.widths[i];
  }
  head_ = Conv2d<T>::create(params_, "pose/head", ConvSpec::square(in, 6, 1), rng);
}

template <typename T>
Var<T> PoseNet<T>::regress(const Var<T>& target, const Var<T>& source) const {
  if (target.shape() != source.shape() || target.rank() != 4 || target.dim(1) != 3) {
    throw ShapeError("pose net: target " + shape_string(target.shape()) + " and source " +
                     shape_string(source.shape()) + " must both be [N,3,H,W] at one resolution");
  }
  Var<T> x = concat<T>({target, source}, 1);
  for (const auto& c : convs_) x = relu(c(x));
  const Var<T> pooled = mean_dims(head_(x), {2, 3});
  return reshape(pooled, {target.dim(0), 6}) * static_cast<T>(cfg_.output_scale);
}

PoseSE3 estimate_pose(const PoseNet<float>& net, const Tensor<float>& target, const Tensor<float>& source) {
  NoGradGuard guard;
  // A single [3,H,W] image pair; a batch of one is accepted too.
  auto as_batch = [](const Tensor<float>& t) {
    return t.rank() == 3 ? t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}) : t;
  };
  const Var<float> p = net.regress(Var<float>(as_batch(target), false), Var<float>(as_batch(source), false));
  if (p.dim(0) != 1) throw ShapeError("estimate_pose: expects a single image pair");
  std::array<double, 6> v{};
  for (int i = 0; i < 6; ++i) v[i] = p.value()[i];
  return axis_angle_to_se3(v);
}

template class PoseNet<float>;
template class PoseNet<double>;

}  // namespace rtsmono
