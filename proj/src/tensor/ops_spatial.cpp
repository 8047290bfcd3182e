#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rtsmono/ops.hpp"
#include "rtsmono/parallel.hpp"

namespace rtsmono {

// ---------------------------------------------------------------------------
// ConvSpec

ConvSpec ConvSpec::square(std::int64_t in, std::int64_t out, int kernel, int stride, int dilation,
                          std::int64_t groups) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.stride_h = s.stride_w = stride;
  s.dilation_h = s.dilation_w = dilation;
  s.pad_h = s.pad_w = dilation * (kernel - 1) / 2;
  s.groups = groups;
  s.validate();
  return s;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || groups < 1) {
    throw ShapeError("conv: channel counts and groups must be positive");
  }
  if (in_channels % groups != 0) {
    throw ShapeError("conv: in_channels " + std::to_string(in_channels) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (out_channels % groups != 0) {
    throw ShapeError("conv: out_channels " + std::to_string(out_channels) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (kernel_h < 1 || kernel_w < 1 || stride_h < 1 || stride_w < 1 || dilation_h < 1 ||
      dilation_w < 1 || pad_h < 0 || pad_w < 0) {
    throw ShapeError("conv: kernel, stride and dilation must be >= 1, padding >= 0");
  }
}

std::int64_t ConvSpec::out_h(std::int64_t h) const {
  return (h + 2 * pad_h - dilation_h * (kernel_h - 1) - 1) / stride_h + 1;
}

std::int64_t ConvSpec::out_w(std::int64_t w) const {
  return (w + 2 * pad_w - dilation_w * (kernel_w - 1) - 1) / stride_w + 1;
}

// ---------------------------------------------------------------------------
// MacCounter

namespace {
thread_local MacCounter* t_counter = nullptr;
}

MacCounter::MacCounter() : prev_(t_counter) { t_counter = this; }
MacCounter::~MacCounter() { t_counter = prev_; }

void MacCounter::record(std::int64_t macs) {
  for (MacCounter* c = t_counter; c != nullptr; c = c->prev_) c->macs_ += macs;
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  ConvSpec spec;
  std::int64_t n, h, w, oh, ow;
  std::int64_t cin_g() const { return spec.in_channels / spec.groups; }
  std::int64_t cout_g() const { return spec.out_channels / spec.groups; }
  std::int64_t k() const { return cin_g() * spec.kernel_h * spec.kernel_w; }
  std::int64_t p() const { return oh * ow; }
  bool pointwise() const {
    return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride_h == 1 && spec.stride_w == 1 &&
           spec.pad_h == 0 && spec.pad_w == 0;
  }
  bool depthwise() const {
    return spec.groups == spec.in_channels && spec.out_channels == spec.in_channels;
  }
};

// Unfolds one group of one image into col [K, P].
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const auto& s = g.spec;
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    const T* plane = x + c * g.h * g.w;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        T* row = col + ((c * s.kernel_h + ky) * s.kernel_w + kx) * g.p();
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * s.stride_h - s.pad_h + ky * s.dilation_h;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * s.stride_w - s.pad_w + kx * s.dilation_w;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* dx) {
  const auto& s = g.spec;
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    T* plane = dx + c * g.h * g.w;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const T* row = col + ((c * s.kernel_h + ky) * s.kernel_w + kx) * g.p();
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * s.stride_h - s.pad_h + ky * s.dilation_h;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.ow;
          T* dst = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * s.stride_w - s.pad_w + kx * s.dilation_w;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const T* b, const ConvGeom& g, T* out) {
  const auto& s = g.spec;
  const std::int64_t c_total = s.in_channels;
  parallel_for(0, g.n * c_total, [&](std::int64_t nc) {
    const std::int64_t c = nc % c_total;
    const T* plane = x + nc * g.h * g.w;
    const T* wk = w + c * s.kernel_h * s.kernel_w;
    T* dst = out + nc * g.p();
    const T bias = b ? b[c] : T(0);
    for (std::int64_t i = 0; i < g.p(); ++i) dst[i] = bias;
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const T wv = wk[ky * s.kernel_w + kx];
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * s.stride_h - s.pad_h + ky * s.dilation_h;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = plane + iy * g.w;
          T* o = dst + oy * g.ow;
          const std::int64_t off = kx * s.dilation_w - s.pad_w;
          // valid ox range where 0 <= ox*stride + off < w
          std::int64_t lo = 0;
          while (lo < g.ow && lo * s.stride_w + off < 0) ++lo;
          std::int64_t hi = g.ow;
          while (hi > lo && (hi - 1) * s.stride_w + off >= g.w) --hi;
          if (s.stride_w == 1) {
            const T* sp = src + off;
            for (std::int64_t ox = lo; ox < hi; ++ox) o[ox] += wv * sp[ox];
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) o[ox] += wv * src[ox * s.stride_w + off];
          }
        }
      }
    }
  });
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* gout, const ConvGeom& g, T* gx,
                        T* gw_parts, T* gb_parts) {
  // gw_parts / gb_parts hold one slot per (n, c) so the final sum order is fixed.
  const auto& s = g.spec;
  const std::int64_t c_total = s.in_channels;
  const std::int64_t kk = s.kernel_h * s.kernel_w;
  parallel_for(0, g.n * c_total, [&](std::int64_t nc) {
    const std::int64_t c = nc % c_total;
    const T* plane = x + nc * g.h * g.w;
    const T* wk = w + c * kk;
    const T* go = gout + nc * g.p();
    T* gplane = gx ? gx + nc * g.h * g.w : nullptr;
    if (gb_parts) {
      T acc = 0;
      for (std::int64_t i = 0; i < g.p(); ++i) acc += go[i];
      gb_parts[nc] = acc;
    }
    for (int ky = 0; ky < s.kernel_h; ++ky) {
      for (int kx = 0; kx < s.kernel_w; ++kx) {
        const T wv = wk[ky * s.kernel_w + kx];
        T wacc = 0;
        const std::int64_t off = kx * s.dilation_w - s.pad_w;
        std::int64_t lo = 0;
        while (lo < g.ow && lo * s.stride_w + off < 0) ++lo;
        std::int64_t hi = g.ow;
        while (hi > lo && (hi - 1) * s.stride_w + off >= g.w) --hi;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * s.stride_h - s.pad_h + ky * s.dilation_h;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = plane + iy * g.w;
          const T* gr = go + oy * g.ow;
          T* gdst = gplane ? gplane + iy * g.w : nullptr;
          for (std::int64_t ox = lo; ox < hi; ++ox) {
            const std::int64_t ix = ox * s.stride_w + off;
            wacc += gr[ox] * src[ix];
            if (gdst) gdst[ix] += gr[ox] * wv;
          }
        }
        if (gw_parts) gw_parts[nc * kk + ky * s.kernel_w + kx] = wacc;
      }
    }
  });
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, const ConvSpec& spec) {
  spec.validate();
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_string(x.shape()));
  if (x.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: input channel dimension (axis 1) is " + std::to_string(x.dim(1)) +
                     ", spec expects " + std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + shape_string(weight.shape()) + ", expected " +
                     shape_string(spec.weight_shape()));
  }
  if (bias && bias->shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias shape " + shape_string(bias->shape()) + ", expected [" +
                     std::to_string(spec.out_channels) + "]");
  }
  ConvGeom g{spec, x.dim(0), x.dim(2), x.dim(3), spec.out_h(x.dim(2)), spec.out_w(x.dim(3))};
  if (g.oh < 1 || g.ow < 1) {
    throw ShapeError("conv2d: input spatial size " + shape_string(x.shape()) +
                     " too small for the kernel");
  }
  MacCounter::record(g.n * spec.out_channels * g.p() * g.k());

  Tensor<T> out({g.n, spec.out_channels, g.oh, g.ow});
  const T* px = x.value().ptr();
  const T* pw = weight.value().ptr();
  const T* pb = bias ? bias->value().ptr() : nullptr;

  if (g.depthwise()) {
    depthwise_forward(px, pw, pb, g, out.ptr());
  } else {
    const std::int64_t in_img = spec.in_channels * g.h * g.w;
    const std::int64_t out_img = spec.out_channels * g.p();
    parallel_for(0, g.n, [&](std::int64_t n) {
      std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.k() * g.p()));
      for (std::int64_t gi = 0; gi < spec.groups; ++gi) {
        const T* xg = px + n * in_img + gi * g.cin_g() * g.h * g.w;
        const T* colp = xg;
        if (!g.pointwise()) {
          im2col(xg, g, col.data());
          colp = col.data();
        }
        CMapMat<T> wmat(pw + gi * g.cout_g() * g.k(), g.cout_g(), g.k());
        CMapMat<T> cmat(colp, g.k(), g.p());
        MapMat<T> omat(out.ptr() + n * out_img + gi * g.cout_g() * g.p(), g.cout_g(), g.p());
        omat.noalias() = wmat * cmat;
        if (pb) {
          for (std::int64_t oc = 0; oc < g.cout_g(); ++oc) omat.row(oc).array() += pb[gi * g.cout_g() + oc];
        }
      }
    });
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_result<T>(std::move(out), parents, "conv2d", [g, has_bias](Node<T>& node) {
    const auto& s = g.spec;
    Node<T>& X = *node.parents[0];
    Node<T>& W = *node.parents[1];
    Node<T>* B = has_bias ? node.parents[2].get() : nullptr;
    const bool need_x = X.requires_grad;
    const bool need_w = W.requires_grad;
    const bool need_b = B && B->requires_grad;
    const T* px = X.value.ptr();
    const T* pw = W.value.ptr();
    const T* go = node.grad.ptr();
    T* gx = need_x ? X.grad_buffer().ptr() : nullptr;

    if (g.depthwise()) {
      const std::int64_t kk = s.kernel_h * s.kernel_w;
      std::vector<T> gw_parts(need_w ? static_cast<std::size_t>(g.n * s.in_channels * kk) : 0);
      std::vector<T> gb_parts(need_b ? static_cast<std::size_t>(g.n * s.in_channels) : 0);
      depthwise_backward(px, pw, go, g, gx, need_w ? gw_parts.data() : nullptr,
                         need_b ? gb_parts.data() : nullptr);
      if (need_w) {
        T* gw = W.grad_buffer().ptr();
        for (std::int64_t n = 0; n < g.n; ++n) {
          for (std::int64_t i = 0; i < s.in_channels * kk; ++i) gw[i] += gw_parts[n * s.in_channels * kk + i];
        }
      }
      if (need_b) {
        T* gb = B->grad_buffer().ptr();
        for (std::int64_t n = 0; n < g.n; ++n) {
          for (std::int64_t c = 0; c < s.in_channels; ++c) gb[c] += gb_parts[n * s.in_channels + c];
        }
      }
      return;
    }

    const std::int64_t in_img = s.in_channels * g.h * g.w;
    const std::int64_t out_img = s.out_channels * g.p();
    const std::int64_t wsize = s.out_channels * g.k();
    std::vector<T> gw_parts(need_w ? static_cast<std::size_t>(g.n * wsize) : 0);
    parallel_for(0, g.n, [&](std::int64_t n) {
      std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.k() * g.p()));
      std::vector<T> dcol(need_x && !g.pointwise() ? static_cast<std::size_t>(g.k() * g.p()) : 0);
      for (std::int64_t gi = 0; gi < s.groups; ++gi) {
        const T* xg = px + n * in_img + gi * g.cin_g() * g.h * g.w;
        CMapMat<T> gomat(go + n * out_img + gi * g.cout_g() * g.p(), g.cout_g(), g.p());
        CMapMat<T> wmat(pw + gi * g.cout_g() * g.k(), g.cout_g(), g.k());
        if (need_w) {
          const T* colp = xg;
          if (!g.pointwise()) {
            im2col(xg, g, col.data());
            colp = col.data();
          }
          CMapMat<T> cmat(colp, g.k(), g.p());
          MapMat<T> gwmat(gw_parts.data() + n * wsize + gi * g.cout_g() * g.k(), g.cout_g(), g.k());
          gwmat.noalias() = gomat * cmat.transpose();
        }
        if (need_x) {
          T* gxg = gx + n * in_img + gi * g.cin_g() * g.h * g.w;
          if (g.pointwise()) {
            MapMat<T> gxmat(gxg, g.k(), g.p());
            gxmat.noalias() += wmat.transpose() * gomat;
          } else {
            MapMat<T> dmat(dcol.data(), g.k(), g.p());
            dmat.noalias() = wmat.transpose() * gomat;
            col2im(dcol.data(), g, gxg);
          }
        }
      }
    });
    if (need_w) {
      T* gw = W.grad_buffer().ptr();
      for (std::int64_t n = 0; n < g.n; ++n) {
        const T* part = gw_parts.data() + n * wsize;
        for (std::int64_t i = 0; i < wsize; ++i) gw[i] += part[i];
      }
    }
    if (need_b) {
      T* gb = B->grad_buffer().ptr();
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t oc = 0; oc < s.out_channels; ++oc) {
          const T* row = go + n * out_img + oc * g.p();
          T acc = 0;
          for (std::int64_t i = 0; i < g.p(); ++i) acc += row[i];
          gb[oc] += acc;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// bilinear_sample

template <typename T>
Var<T> bilinear_sample(const Var<T>& image, const Var<T>& grid) {
  if (image.rank() != 4) throw ShapeError("bilinear_sample: image must be [N,C,H,W], got " + shape_string(image.shape()));
  if (grid.rank() != 4 || grid.dim(3) != 2 || grid.dim(0) != image.dim(0)) {
    throw ShapeError("bilinear_sample: grid must be [N,H',W',2] with N=" +
                     std::to_string(image.dim(0)) + ", got " + shape_string(grid.shape()));
  }
  for (T v : grid.value().data()) {
    if (!std::isfinite(v)) throw std::domain_error("bilinear_sample: non-finite grid coordinate");
  }
  const std::int64_t n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  const std::int64_t oh = grid.dim(1), ow = grid.dim(2);
  Tensor<T> out({n, c, oh, ow});
  const T* img = image.value().ptr();
  const T* gr = grid.value().ptr();

  parallel_for(0, n, [&](std::int64_t b) {
    for (std::int64_t p = 0; p < oh * ow; ++p) {
      const T gx = gr[(b * oh * ow + p) * 2];
      const T gy = gr[(b * oh * ow + p) * 2 + 1];
      const T x = std::clamp(gx, T(0), static_cast<T>(w - 1));
      const T y = std::clamp(gy, T(0), static_cast<T>(h - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
      const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const std::int64_t y1 = std::min(y0 + 1, h - 1);
      const T ax = x - static_cast<T>(x0);
      const T ay = y - static_cast<T>(y0);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* plane = img + (b * c + ch) * h * w;
        const T v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
        const T v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
        out[(b * c + ch) * oh * ow + p] =
            (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) + ay * ((T(1) - ax) * v10 + ax * v11);
      }
    }
  });

  return make_result<T>(std::move(out), {image, grid}, "bilinear_sample",
                        [n, c, h, w, oh, ow](Node<T>& node) {
    Node<T>& I = *node.parents[0];
    Node<T>& G = *node.parents[1];
    const T* img = I.value.ptr();
    const T* gr = G.value.ptr();
    const T* go = node.grad.ptr();
    T* gi = I.requires_grad ? I.grad_buffer().ptr() : nullptr;
    T* gg = G.requires_grad ? G.grad_buffer().ptr() : nullptr;
    parallel_for(0, n, [&](std::int64_t b) {
      for (std::int64_t p = 0; p < oh * ow; ++p) {
        const T gx = gr[(b * oh * ow + p) * 2];
        const T gy = gr[(b * oh * ow + p) * 2 + 1];
        const T x = std::clamp(gx, T(0), static_cast<T>(w - 1));
        const T y = std::clamp(gy, T(0), static_cast<T>(h - 1));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
        const std::int64_t x1 = std::min(x0 + 1, w - 1);
        const std::int64_t y1 = std::min(y0 + 1, h - 1);
        const T ax = x - static_cast<T>(x0);
        const T ay = y - static_cast<T>(y0);
        const bool x_inside = gx > T(0) && gx < static_cast<T>(w - 1);
        const bool y_inside = gy > T(0) && gy < static_cast<T>(h - 1);
        T dgx = 0, dgy = 0;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const T g = go[(b * c + ch) * oh * ow + p];
          if (g == T(0)) continue;
          const std::int64_t base = (b * c + ch) * h * w;
          if (gi) {
            gi[base + y0 * w + x0] += g * (T(1) - ay) * (T(1) - ax);
            gi[base + y0 * w + x1] += g * (T(1) - ay) * ax;
            gi[base + y1 * w + x0] += g * ay * (T(1) - ax);
            gi[base + y1 * w + x1] += g * ay * ax;
          }
          if (gg) {
            const T* plane = img + base;
            const T v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
            const T v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
            dgx += g * ((T(1) - ay) * (v01 - v00) + ay * (v11 - v10));
            dgy += g * ((T(1) - ax) * (v10 - v00) + ax * (v11 - v01));
          }
        }
        if (gg) {
          if (x_inside) gg[(b * oh * ow + p) * 2] += dgx;
          if (y_inside) gg[(b * oh * ow + p) * 2 + 1] += dgy;
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// resize / pooling

namespace {

struct AxisTaps {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

AxisTaps half_pixel_taps(std::int64_t in, std::int64_t out) {
  AxisTaps t;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    t.i0.push_back(lo);
    t.i1.push_back(hi);
    t.w1.push_back(hi == lo ? 0.0 : src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w) {
  if (x.rank() != 4) throw ShapeError("resize_bilinear: input must be [N,C,H,W], got " + shape_string(x.shape()));
  if (out_h < 1 || out_w < 1 || x.dim(2) < 1 || x.dim(3) < 1) throw ShapeError("resize_bilinear: empty size");
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const AxisTaps ty = half_pixel_taps(h, out_h);
  const AxisTaps tx = half_pixel_taps(w, out_w);
  Tensor<T> out({x.dim(0), x.dim(1), out_h, out_w});
  const T* px = x.value().ptr();
  parallel_for(0, planes, [&](std::int64_t p) {
    const T* src = px + p * h * w;
    T* dst = out.ptr() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const T wy = static_cast<T>(ty.w1[oy]);
      const T* r0 = src + ty.i0[oy] * w;
      const T* r1 = src + ty.i1[oy] * w;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const T wx = static_cast<T>(tx.w1[ox]);
        const T top = (T(1) - wx) * r0[tx.i0[ox]] + wx * r0[tx.i1[ox]];
        const T bot = (T(1) - wx) * r1[tx.i0[ox]] + wx * r1[tx.i1[ox]];
        dst[oy * out_w + ox] = (T(1) - wy) * top + wy * bot;
      }
    }
  });
  return make_result<T>(std::move(out), {x}, "resize_bilinear",
                        [planes, h, w, out_h, out_w, ty, tx](Node<T>& node) {
    T* gx = node.parents[0]->grad_buffer().ptr();
    const T* go = node.grad.ptr();
    parallel_for(0, planes, [&](std::int64_t p) {
      T* dst = gx + p * h * w;
      const T* g = go + p * out_h * out_w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const T wy = static_cast<T>(ty.w1[oy]);
        T* r0 = dst + ty.i0[oy] * w;
        T* r1 = dst + ty.i1[oy] * w;
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const T wx = static_cast<T>(tx.w1[ox]);
          const T v = g[oy * out_w + ox];
          r0[tx.i0[ox]] += v * (T(1) - wy) * (T(1) - wx);
          r0[tx.i1[ox]] += v * (T(1) - wy) * wx;
          r1[tx.i0[ox]] += v * wy * (T(1) - wx);
          r1[tx.i1[ox]] += v * wy * wx;
        }
      }
    });
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  if (x.rank() != 4 || x.dim(2) < 1 || x.dim(3) < 1) {
    throw ShapeError("upsample2x: input must be [N,C,H,W] with H,W >= 1, got " + shape_string(x.shape()));
  }
  return resize_bilinear(x, 2 * x.dim(2), 2 * x.dim(3));
}

template <typename T>
Var<T> avg_pool2x(const Var<T>& x) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    throw ShapeError("avg_pool2x: input must be [N,C,H,W] with H,W >= 2, got " + shape_string(x.shape()));
  }
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
  const T* px = x.value().ptr();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        const T* s = px + p * h * w + 2 * i * w + 2 * j;
        out[(p * oh + i) * ow + j] = T(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
      }
    }
  }
  return make_result<T>(std::move(out), {x}, "avg_pool2x", [planes, h, w, oh, ow](Node<T>& node) {
    T* gx = node.parents[0]->grad_buffer().ptr();
    const T* go = node.grad.ptr();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          const T v = T(0.25) * go[(p * oh + i) * ow + j];
          T* d = gx + p * h * w + 2 * i * w + 2 * j;
          d[0] += v;
          d[1] += v;
          d[w] += v;
          d[w + 1] += v;
        }
      }
    }
  });
}

template <typename T>
Var<T> box_filter3x3(const Var<T>& x) {
  if (x.rank() < 2) throw ShapeError("box_filter3x3 needs [...,H,W], got " + shape_string(x.shape()));
  const std::int64_t h = x.dim(-2), w = x.dim(-1);
  const std::int64_t planes = x.size() / std::max<std::int64_t>(h * w, 1);
  Tensor<T> out(x.shape());
  const T* px = x.value().ptr();
  auto span = [](std::int64_t i, std::int64_t n) {
    return std::pair<std::int64_t, std::int64_t>{std::max<std::int64_t>(i - 1, 0),
                                                 std::min<std::int64_t>(i + 1, n - 1)};
  };
  parallel_for(0, planes, [&](std::int64_t p) {
    const T* src = px + p * h * w;
    T* dst = out.ptr() + p * h * w;
    for (std::int64_t i = 0; i < h; ++i) {
      const auto [i0, i1] = span(i, h);
      for (std::int64_t j = 0; j < w; ++j) {
        const auto [j0, j1] = span(j, w);
        T acc = 0;
        for (std::int64_t a = i0; a <= i1; ++a) {
          for (std::int64_t b = j0; b <= j1; ++b) acc += src[a * w + b];
        }
        dst[i * w + j] = acc / static_cast<T>((i1 - i0 + 1) * (j1 - j0 + 1));
      }
    }
  });
  return make_result<T>(std::move(out), {x}, "box_filter3x3", [planes, h, w, span](Node<T>& node) {
    T* gx = node.parents[0]->grad_buffer().ptr();
    const T* go = node.grad.ptr();
    parallel_for(0, planes, [&](std::int64_t p) {
      T* dst = gx + p * h * w;
      const T* g = go + p * h * w;
      for (std::int64_t i = 0; i < h; ++i) {
        const auto [i0, i1] = span(i, h);
        for (std::int64_t j = 0; j < w; ++j) {
          const auto [j0, j1] = span(j, w);
          const T v = g[i * w + j] / static_cast<T>((i1 - i0 + 1) * (j1 - j0 + 1));
          for (std::int64_t a = i0; a <= i1; ++a) {
            for (std::int64_t b = j0; b <= j1; ++b) dst[a * w + b] += v;
          }
        }
      }
    });
  });
}

#define RTSMONO_INSTANTIATE(T)                                                               \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>*, const ConvSpec&);   \
  template Var<T> bilinear_sample<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> resize_bilinear<T>(const Var<T>&, std::int64_t, std::int64_t);             \
  template Var<T> upsample2x<T>(const Var<T>&);                                              \
  template Var<T> avg_pool2x<T>(const Var<T>&);                                              \
  template Var<T> box_filter3x3<T>(const Var<T>&);

RTSMONO_INSTANTIATE(float)
RTSMONO_INSTANTIATE(double)
#undef RTSMONO_INSTANTIATE

}  // namespace rtsmono
