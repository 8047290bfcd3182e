#pragma once

#include <vector>

#include "rtsmono/autograd.hpp"
#include "rtsmono/tensor.hpp"

namespace rtsmono {

struct LossWeights {
  double alpha = 0.85;   // SSIM share of the photometric / consistency error
  double gamma = 1.0;    // photometric
  double beta = 0.001;   // smoothness
  double lambda = 1.0;   // cross-scale consistency
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;
  /// Cross-scale term adds the SSIM similarity instead of the DSSIM dissimilarity.
  bool cross_scale_plus_ssim = false;

  void validate() const;
};

/// A reconstructed target frame with its per-pixel validity ([N,1,H,W], 0 or 1).
template <typename T>
struct ReconCandidate {
  Var<T> image;
  Tensor<T> valid;
};

/// Pixel correspondences of one map pair: sampling both maps at their grids gives
/// two images of the shared field of view on a common lattice.
template <typename T>
struct RegionPair {
  Tensor<T> grid_a;  // [N,Hc,Wc,2] coordinates in map a
  Tensor<T> grid_b;  // [N,Hc,Wc,2] coordinates in map b
};

template <typename T>
struct CrossScaleBundle {
  Var<T> depth_l;  // [N,1,Hl,Wl]
  Var<T> depth_m;  // [N,1,Hm,Wm]
  Var<T> depth_h;  // [N,1,Hh,Wh]
  RegionPair<T> lm;  // a = L, b = M
  RegionPair<T> mh;  // a = M, b = H
};

/// Per-pixel SSIM [N,C,H,W] with 3x3 box statistics over the in-image part of each window.
template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const LossWeights& w);

/// Per-pixel error alpha*(1-SSIM)/2 + (1-alpha)*|a-b|, channel mean -> [N,1,H,W].
template <typename T>
Var<T> photometric_error(const Var<T>& target, const Var<T>& recon, const LossWeights& w);

/// Per-pixel minimum over candidates, invalid pixels dropped, mean over the rest.
template <typename T>
Var<T> photometric_loss(const Var<T>& target, const std::vector<ReconCandidate<T>>& candidates,
                        const LossWeights& w);

/// disp / mean(disp), the mean taken per batch item.
template <typename T>
Var<T> mean_normalize_disp(const Var<T>& disp);

/// Edge-aware smoothness of the mean-normalised disparity [N,1,H,W] against image [N,C,H,W].
template <typename T>
Var<T> smoothness_loss(const Var<T>& disp, const Var<T>& image);

/// Resamples the three depths onto the shared regions, normalises by the M-scale mean
/// and sums the L-M and M-H consistency terms.
template <typename T>
Var<T> cross_scale_consistency_loss(const CrossScaleBundle<T>& bundle, const LossWeights& w);

/// gamma * Lp + beta * Ls + lambda * Ld. Rejects non-finite components by name.
template <typename T>
Var<T> total_loss(const Var<T>& lp, const Var<T>& ls, const Var<T>& ld, const LossWeights& w);

}  // namespace rtsmono
