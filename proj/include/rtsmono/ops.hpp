#pragma once

#include <cstdint>
#include <type_traits>
#include <vector>

#include "rtsmono/autograd.hpp"
#include "rtsmono/tensor.hpp"

namespace rtsmono {

/// Non-deduced scalar parameter so `x * 2.0` works for Var<float>.
template <typename T>
using Scalar = std::type_identity_t<T>;

// ---------------------------------------------------------------------------
// Convolution geometry.

struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dilation_h = 1;
  int dilation_w = 1;
  std::int64_t groups = 1;

  /// Square kernel with "same"-style padding (dilation * (k - 1) / 2).
  static ConvSpec square(std::int64_t in, std::int64_t out, int kernel, int stride = 1,
                         int dilation = 1, std::int64_t groups = 1);

  void validate() const;
  std::int64_t out_h(std::int64_t h) const;
  std::int64_t out_w(std::int64_t w) const;
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
};

/// Counts multiply-accumulates issued by conv2d on this thread while alive.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;
  std::int64_t macs() const { return macs_; }

  static void record(std::int64_t macs);

 private:
  std::int64_t macs_ = 0;
  MacCounter* prev_;
};

/// When on (the default), div and log reject zero / non-positive arguments.
bool checked_mode();
void set_checked_mode(bool on);

// ---------------------------------------------------------------------------
// Elementwise, broadcasting numpy-style over trailing axes.

template <typename T> Var<T> constant(Tensor<T> value);
template <typename T> Var<T> full_like(const Var<T>& x, Scalar<T> v);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> minimum(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> maximum(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> add_scalar(const Var<T>& x, Scalar<T> c);
template <typename T> Var<T> mul_scalar(const Var<T>& x, Scalar<T> c);
/// c / x
template <typename T> Var<T> rdiv_scalar(Scalar<T> c, const Var<T>& x);

template <typename T> Var<T> neg(const Var<T>& x);
template <typename T> Var<T> abs(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);
template <typename T> Var<T> sqrt(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> elu(const Var<T>& x);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> clamp(const Var<T>& x, Scalar<T> lo, Scalar<T> hi);

// ---------------------------------------------------------------------------
// Layout.

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, int axis);
template <typename T> Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t length);
/// Mirrors the last axis.
template <typename T> Var<T> flip_w(const Var<T>& x);

// ---------------------------------------------------------------------------
// Reductions. Summation order is fixed (row-major over the input).

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
/// Keeps reduced axes with size 1.
template <typename T> Var<T> sum_dims(const Var<T>& x, const std::vector<int>& axes);
template <typename T> Var<T> mean_dims(const Var<T>& x, const std::vector<int>& axes);

// ---------------------------------------------------------------------------
// Spatial operators on [..., H, W].

/// Forward difference along W: x[..., j+1] - x[..., j]; output width W-1.
template <typename T> Var<T> grad_x(const Var<T>& x);
/// Forward difference along H; output height H-1.
template <typename T> Var<T> grad_y(const Var<T>& x);

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, const ConvSpec& spec);

/// Samples image [N,C,H,W] at continuous pixel coordinates grid [N,H',W',2] (x, y).
/// Coordinates are clamped to the border.
template <typename T> Var<T> bilinear_sample(const Var<T>& image, const Var<T>& grid);

/// Bilinear resize with half-pixel centres (not corner aligned), edge clamped.
template <typename T> Var<T> resize_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w);
template <typename T> Var<T> upsample2x(const Var<T>& x);
/// 2x2 mean pooling, stride 2.
template <typename T> Var<T> avg_pool2x(const Var<T>& x);
/// 3x3 mean over the in-image part of each window (no padding values enter the mean).
template <typename T> Var<T> box_filter3x3(const Var<T>& x);

// ---------------------------------------------------------------------------
// Operator sugar.

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a) { return neg(a); }
template <typename T> Var<T> operator+(const Var<T>& a, Scalar<T> c) { return add_scalar(a, c); }
template <typename T> Var<T> operator+(Scalar<T> c, const Var<T>& a) { return add_scalar(a, c); }
template <typename T> Var<T> operator-(const Var<T>& a, Scalar<T> c) { return add_scalar(a, -c); }
template <typename T> Var<T> operator-(Scalar<T> c, const Var<T>& a) { return add_scalar(neg(a), c); }
template <typename T> Var<T> operator*(const Var<T>& a, Scalar<T> c) { return mul_scalar(a, c); }
template <typename T> Var<T> operator*(Scalar<T> c, const Var<T>& a) { return mul_scalar(a, c); }
template <typename T> Var<T> operator/(const Var<T>& a, Scalar<T> c) { return mul_scalar(a, T(1) / c); }
template <typename T> Var<T> operator/(Scalar<T> c, const Var<T>& a) { return rdiv_scalar(c, a); }

}  // namespace rtsmono
