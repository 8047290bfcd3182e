#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rtsmono/autograd.hpp"
#include "rtsmono/nn.hpp"
#include "rtsmono/ops.hpp"

namespace rtsmono::testing {

inline constexpr double kFdStep = 1e-3;
inline constexpr double kFdTolerance = 1e-4;
// Relative error denominator floor: gradients smaller than this are compared absolutely.
inline constexpr double kFdFloor = 1e-3;

struct GradCheckResult {
  double max_rel = 0;
  std::int64_t checked = 0;
  std::int64_t kinks = 0;  // coordinates skipped because a non-differentiable point lies within h
  std::string worst;
  bool ok() const { return max_rel < kFdTolerance; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

/// True when f is not smooth within h of the current point (ReLU, abs or min/max
/// switching inside the stencil). f is sampled on a 9-point grid with spacing q = h/4.
/// For smooth f the second differences are linear in the offset up to O(q^4) and
/// gap(h) = 2 gap(h/2); a slope jump of size d leaves a residual of order d*q in the
/// second differences wherever it falls, and perturbs the central difference by at most d/2.
inline bool kink_within(const std::function<double()>& f, double& x, double h, double tol) {
  const double orig = x;
  const double q = h / 4;
  std::array<double, 9> v{};
  for (int k = -4; k <= 4; ++k) {
    x = orig + k * q;
    v[k + 4] = f();
  }
  x = orig;
  std::array<double, 7> d2{};
  double mean = 0, slope = 0;
  for (int k = -3; k <= 3; ++k) {
    d2[k + 3] = v[k + 5] - 2 * v[k + 4] + v[k + 3];
    mean += d2[k + 3] / 7;
    slope += k * d2[k + 3] / 28;
  }
  double residual = 0;
  for (int k = -3; k <= 3; ++k) residual += std::abs(d2[k + 3] - mean - slope * k);
  const double gap_h = (v[8] - 2 * v[4] + v[0]) / h;
  const double gap_half = (v[6] - 2 * v[4] + v[2]) / (h / 2);
  return residual / q > tol / 2 || std::abs(gap_h - 2 * gap_half) > tol;
}

/// Central-difference check of d f / d leaves. `max_per_leaf` > 0 checks a seeded random
/// subset of each leaf's elements. A failing coordinate that sits within h of a kink is
/// counted in `kinks` and, for sampled leaves, replaced by another draw.
inline GradCheckResult grad_check(const std::function<Var<double>()>& f, std::vector<Var<double>> leaves,
                                  int max_per_leaf = -1, std::uint64_t seed = 0, double h = kFdStep) {
  for (auto& l : leaves) l.zero_grad();
  f().backward();
  std::vector<Tensor<double>> analytic;
  for (const auto& l : leaves) analytic.push_back(l.grad());
  for (auto& l : leaves) l.zero_grad();

  GradCheckResult r;
  Rng rng(seed + 12345);
  NoGradGuard guard;
  const auto value = [&] { return f().item(); };
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Tensor<double>& v = leaves[k].mutable_value();
    const bool sampled = max_per_leaf > 0 && v.size() > max_per_leaf;
    std::vector<std::int64_t> idx;
    if (sampled) {
      for (int i = 0; i < max_per_leaf; ++i) idx.push_back(static_cast<std::int64_t>(rng.below(v.size())));
    } else {
      for (std::int64_t i = 0; i < v.size(); ++i) idx.push_back(i);
    }
    int redraws = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::int64_t i = idx[j];
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = value();
      v[i] = orig - h;
      const double fm = value();
      v[i] = orig;
      const double num = (fp - fm) / (2 * h);
      const double rel = relative_error(analytic[k][i], num);
      if (!(rel < kFdTolerance) && std::isfinite(rel) &&
          kink_within(value, v[i], h, kFdTolerance * std::max(std::abs(num), kFdFloor))) {
        ++r.kinks;
        if (sampled && redraws < 4 * max_per_leaf) {
          ++redraws;
          idx.push_back(static_cast<std::int64_t>(rng.below(v.size())));
        }
        continue;
      }
      ++r.checked;
      if (!(rel <= r.max_rel)) {
        r.max_rel = std::isnan(rel) ? 1e300 : rel;
        r.worst = "leaf " + std::to_string(k) + " index " + std::to_string(i) + ": analytic " +
                  std::to_string(analytic[k][i]) + " numeric " + std::to_string(num);
      }
    }
  }
  return r;
}

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Values with magnitude in [margin, 1], random sign: keeps kinks at zero out of FD reach.
inline Tensor<double> away_from_zero(const Shape& shape, Rng& rng, double margin = 0.05) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(margin, 1.0);
  return t;
}

inline Var<double> leaf(Tensor<double> t) { return Var<double>(std::move(t), true); }

/// Scalar probe sum(w * y) with fixed random weights, so every output element matters.
inline Var<double> probe(const Var<double>& y, std::uint64_t seed) {
  Rng rng(seed + 777);
  return sum(y * constant(random_tensor(y.shape(), rng, 0.5, 1.5)));
}

}  // namespace rtsmono::testing
