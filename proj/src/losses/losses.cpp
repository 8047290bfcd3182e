#include "rtsmono/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rtsmono/ops.hpp"

namespace rtsmono {

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("loss weights: alpha must lie in [0, 1]");
  if (!(gamma >= 0.0) || !(beta >= 0.0) || !(lambda >= 0.0)) {
    throw std::invalid_argument("loss weights: gamma, beta, lambda must be >= 0");
  }
  if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0)) throw std::invalid_argument("loss weights: SSIM constants must be > 0");
}

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const LossWeights& w) {
  require_same_shape(a, b, "ssim");
  const T c1 = static_cast<T>(w.ssim_c1);
  const T c2 = static_cast<T>(w.ssim_c2);
  const Var<T> mu_a = box_filter3x3(a);
  const Var<T> mu_b = box_filter3x3(b);
  const Var<T> var_a = box_filter3x3(a * a) - mu_a * mu_a;
  const Var<T> var_b = box_filter3x3(b * b) - mu_b * mu_b;
  const Var<T> cov = box_filter3x3(a * b) - mu_a * mu_b;
  const Var<T> num = (T(2) * mu_a * mu_b + c1) * (T(2) * cov + c2);
  const Var<T> den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
  return num / den;
}

template <typename T>
Var<T> photometric_error(const Var<T>& target, const Var<T>& recon, const LossWeights& w) {
  require_same_shape(target, recon, "photometric_error");
  const T alpha = static_cast<T>(w.alpha);
  const Var<T> dssim = (T(1) - ssim(target, recon, w)) * (alpha / T(2));
  const Var<T> l1 = abs(target - recon) * (T(1) - alpha);
  return mean_dims(dssim + l1, {1});
}

template <typename T>
Var<T> photometric_loss(const Var<T>& target, const std::vector<ReconCandidate<T>>& candidates,
                        const LossWeights& w) {
  if (candidates.empty()) throw std::invalid_argument("photometric_loss: no reconstruction candidates");
  const Shape mask_shape{target.dim(0), 1, target.dim(2), target.dim(3)};
  // Invalid pixels get a penalty far above any attainable error so the minimum skips them.
  constexpr double kInvalidPenalty = 1e4;
  Var<T> best;
  Tensor<T> any_valid(mask_shape);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (c.valid.shape() != mask_shape) {
      throw ShapeError("photometric_loss: candidate " + std::to_string(i) + " mask " +
                       shape_string(c.valid.shape()) + ", expected " + shape_string(mask_shape));
    }
    Tensor<T> penalty(mask_shape);
    for (std::int64_t k = 0; k < penalty.size(); ++k) {
      penalty[k] = (T(1) - c.valid[k]) * static_cast<T>(kInvalidPenalty);
      any_valid[k] = std::max(any_valid[k], c.valid[k]);
    }
    const Var<T> err = photometric_error(target, c.image, w) * constant(c.valid) + constant(std::move(penalty));
    best = i == 0 ? err : minimum(best, err);
  }
  double count = 0;
  for (T v : any_valid.data()) count += static_cast<double>(v);
  if (count == 0) throw std::invalid_argument("photometric_loss: every pixel is invalid in every candidate");
  return sum(best * constant(std::move(any_valid))) * static_cast<T>(1.0 / count);
}

template <typename T>
Var<T> mean_normalize_disp(const Var<T>& disp) {
  if (disp.rank() != 4) throw ShapeError("mean_normalize_disp: expected [N,1,H,W], got " + shape_string(disp.shape()));
  const Var<T> m = mean_dims(disp, {1, 2, 3});
  for (T v : m.value().data()) {
    if (v == T(0)) throw std::domain_error("mean_normalize_disp: disparity has zero mean");
  }
  return disp / m;
}

template <typename T>
Var<T> smoothness_loss(const Var<T>& disp, const Var<T>& image) {
  if (disp.rank() != 4 || image.rank() != 4 || disp.dim(0) != image.dim(0) ||
      disp.dim(2) != image.dim(2) || disp.dim(3) != image.dim(3)) {
    throw ShapeError("smoothness_loss: disparity " + shape_string(disp.shape()) +
                     " not aligned with image " + shape_string(image.shape()));
  }
  const Var<T> d = mean_normalize_disp(disp);
  const Var<T> wx = exp(-mean_dims(abs(grad_x(image)), {1}));
  const Var<T> wy = exp(-mean_dims(abs(grad_y(image)), {1}));
  return mean(abs(grad_x(d)) * wx) + mean(abs(grad_y(d)) * wy);
}

template <typename T>
Var<T> cross_scale_consistency_loss(const CrossScaleBundle<T>& bundle, const LossWeights& w) {
  auto check = [](const RegionPair<T>& r, const char* name) {
    if (r.grid_a.shape() != r.grid_b.shape() || r.grid_a.rank() != 4 || r.grid_a.dim(3) != 2) {
      throw ShapeError(std::string("cross_scale_consistency_loss: ") + name + " region grids " +
                       shape_string(r.grid_a.shape()) + " vs " + shape_string(r.grid_b.shape()));
    }
  };
  check(bundle.lm, "L-M");
  check(bundle.mh, "M-H");
  const Var<T> scale = mean_dims(bundle.depth_m, {1, 2, 3});
  auto region = [&](const Var<T>& depth, const Tensor<T>& grid) {
    return bilinear_sample(depth, constant(grid)) / scale;
  };
  const Var<T> dl = region(bundle.depth_l, bundle.lm.grid_a);
  const Var<T> dm_l = region(bundle.depth_m, bundle.lm.grid_b);
  const Var<T> dm_h = region(bundle.depth_m, bundle.mh.grid_a);
  const Var<T> dh = region(bundle.depth_h, bundle.mh.grid_b);

  const T alpha = static_cast<T>(w.alpha);
  const Var<T> l1 = mean(abs(dl - dm_l)) + mean(abs(dm_h - dh));
  const Var<T> s_lm = mean(ssim(dl, dm_l, w));
  const Var<T> s_mh = mean(ssim(dm_h, dh, w));
  if (w.cross_scale_plus_ssim) {
    return l1 * (T(1) - alpha) + (s_lm + s_mh) * (alpha / T(2)) + alpha;
  }
  return l1 * (T(1) - alpha) + ((T(1) - s_lm) + (T(1) - s_mh)) * (alpha / T(2));
}

template <typename T>
Var<T> total_loss(const Var<T>& lp, const Var<T>& ls, const Var<T>& ld, const LossWeights& w) {
  const std::pair<const Var<T>*, const char*> parts[] = {{&lp, "L_p"}, {&ls, "L_s"}, {&ld, "L_d"}};
  for (const auto& [v, name] : parts) {
    if (v->size() != 1) throw ShapeError(std::string("total_loss: ") + name + " is not a scalar");
    if (!std::isfinite(static_cast<double>(v->item()))) {
      throw std::domain_error(std::string("total_loss: non-finite ") + name);
    }
  }
  return lp * static_cast<T>(w.gamma) + ls * static_cast<T>(w.beta) + ld * static_cast<T>(w.lambda);
}

#define RTSMONO_INSTANTIATE(T)                                                                         \
  template Var<T> ssim<T>(const Var<T>&, const Var<T>&, const LossWeights&);                           \
  template Var<T> photometric_error<T>(const Var<T>&, const Var<T>&, const LossWeights&);              \
  template Var<T> photometric_loss<T>(const Var<T>&, const std::vector<ReconCandidate<T>>&,            \
                                      const LossWeights&);                                             \
  template Var<T> mean_normalize_disp<T>(const Var<T>&);                                               \
  template Var<T> smoothness_loss<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> cross_scale_consistency_loss<T>(const CrossScaleBundle<T>&, const LossWeights&);     \
  template Var<T> total_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&, const LossWeights&);

RTSMONO_INSTANTIATE(float)
RTSMONO_INSTANTIATE(double)
#undef RTSMONO_INSTANTIATE

}  // namespace rtsmono
