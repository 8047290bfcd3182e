#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>

#include "broadcast.hpp"
#include "rtsmono/ops.hpp"

namespace rtsmono {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

namespace {
std::atomic<bool> g_checked{true};

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* name, F f, DA da, DB db) {
  auto plan = detail::plan_broadcast(a.shape(), b.shape());
  Tensor<T> out(plan.out);
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  if (plan.same) {
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else {
    detail::for_each_broadcast(plan.out, plan.stride_a, plan.stride_b,
                               [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                                 po[o] = f(pa[ia], pb[ib]);
                               });
  }
  return make_result<T>(std::move(out), {a, b}, name, [plan, da, db](Node<T>& n) {
    Node<T>& A = *n.parents[0];
    Node<T>& B = *n.parents[1];
    const T* g = n.grad.ptr();
    const T* y = n.value.ptr();
    const T* xa = A.value.ptr();
    const T* xb = B.value.ptr();
    if (A.requires_grad) {
      T* ga = A.grad_buffer().ptr();
      if (plan.same) {
        for (std::int64_t i = 0; i < n.value.size(); ++i) ga[i] += g[i] * da(xa[i], xb[i], y[i]);
      } else {
        detail::for_each_broadcast(plan.out, plan.stride_a, plan.stride_b,
                                   [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                                     ga[ia] += g[o] * da(xa[ia], xb[ib], y[o]);
                                   });
      }
    }
    if (B.requires_grad) {
      T* gb = B.grad_buffer().ptr();
      if (plan.same) {
        for (std::int64_t i = 0; i < n.value.size(); ++i) gb[i] += g[i] * db(xa[i], xb[i], y[i]);
      } else {
        detail::for_each_broadcast(plan.out, plan.stride_a, plan.stride_b,
                                   [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                                     gb[ib] += g[o] * db(xa[ia], xb[ib], y[o]);
                                   });
      }
    }
  });
}

// d(x, y) is the derivative given input x and output y.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, const char* name, F f, D d) {
  Tensor<T> out(x.shape());
  const T* px = x.value().ptr();
  T* po = out.ptr();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
  return make_result<T>(std::move(out), {x}, name, [d](Node<T>& node) {
    Node<T>& X = *node.parents[0];
    T* gx = X.grad_buffer().ptr();
    const T* g = node.grad.ptr();
    const T* xv = X.value.ptr();
    const T* y = node.value.ptr();
    const std::int64_t m = node.value.size();
    for (std::int64_t i = 0; i < m; ++i) gx[i] += g[i] * d(xv[i], y[i]);
  });
}

}  // namespace

bool checked_mode() { return g_checked.load(); }
void set_checked_mode(bool on) { g_checked.store(on); }

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> full_like(const Var<T>& x, Scalar<T> v) {
  return Var<T>(Tensor<T>(x.shape(), v), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  if (checked_mode()) {
    for (T v : b.value().data()) {
      if (v == T(0)) throw std::domain_error("div: division by zero");
    }
  }
  return binary<T>(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

// Ties select the first argument.
template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "minimum", [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y, T) { return x <= y ? T(1) : T(0); },
      [](T x, T y, T) { return x <= y ? T(0) : T(1); });
}

template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "maximum", [](T x, T y) { return x >= y ? x : y; },
      [](T x, T y, T) { return x >= y ? T(1) : T(0); },
      [](T x, T y, T) { return x >= y ? T(0) : T(1); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, Scalar<T> c) {
  return unary<T>(
      x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, Scalar<T> c) {
  return unary<T>(
      x, "mul_scalar", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> rdiv_scalar(Scalar<T> c, const Var<T>& x) {
  if (checked_mode()) {
    for (T v : x.value().data()) {
      if (v == T(0)) throw std::domain_error("rdiv: division by zero");
    }
  }
  return unary<T>(
      x, "rdiv_scalar", [c](T v) { return c / v; }, [](T v, T y) { return -y / v; });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return unary<T>(
      x, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary<T>(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary<T>(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  if (checked_mode()) {
    for (T v : x.value().data()) {
      if (v < T(0)) throw std::domain_error("sqrt: negative argument");
    }
  }
  return unary<T>(
      x, "sqrt", [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary<T>(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  if (checked_mode()) {
    for (T v : x.value().data()) {
      if (!(v > T(0))) throw std::domain_error("log: non-positive argument");
    }
  }
  return unary<T>(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> elu(const Var<T>& x) {
  return unary<T>(
      x, "elu", [](T v) { return v > T(0) ? v : std::expm1(v); },
      [](T v, T y) { return v > T(0) ? T(1) : y + T(1); });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  // tanh approximation
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  return unary<T>(
      x, "gelu",
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + a * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(k * (v + a * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * a * v * v);
      });
}

template <typename T>
Var<T> clamp(const Var<T>& x, Scalar<T> lo, Scalar<T> hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary<T>(
      x, "clamp", [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape) +
                     " changes element count");
  }
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, "reshape", [](Node<T>& n) {
    Node<T>& X = *n.parents[0];
    T* gx = X.grad_buffer().ptr();
    const T* g = n.grad.ptr();
    for (std::int64_t i = 0; i < n.value.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of an empty list");
  const int rank = xs[0].rank();
  const int ax = normalize_axis(axis, rank);
  Shape out_shape = xs[0].shape();
  out_shape[ax] = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw ShapeError("concat: rank mismatch " + shape_string(x.shape()));
    for (int d = 0; d < rank; ++d) {
      if (d != ax && x.dim(d) != xs[0].dim(d)) {
        throw ShapeError("concat: dimension " + std::to_string(d) + " differs (" +
                         shape_string(x.shape()) + " vs " + shape_string(xs[0].shape()) + ")");
      }
    }
    out_shape[ax] += x.dim(ax);
  }
  std::int64_t outer = 1;
  for (int d = 0; d < ax; ++d) outer *= out_shape[d];
  std::int64_t inner = 1;
  for (int d = ax + 1; d < rank; ++d) inner *= out_shape[d];
  const std::int64_t out_row = out_shape[ax] * inner;

  Tensor<T> out(out_shape);
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::int64_t row = x.dim(ax) * inner;
    const T* src = x.value().ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * row, src + (o + 1) * row, out.ptr() + o * out_row + off);
    }
    off += row;
  }
  return make_result<T>(std::move(out), xs, "concat",
                        [offsets, outer, out_row](Node<T>& n) {
                          for (std::size_t k = 0; k < n.parents.size(); ++k) {
                            Node<T>& X = *n.parents[k];
                            if (!X.requires_grad) continue;
                            const std::int64_t row = X.value.size() / outer;
                            T* gx = X.grad_buffer().ptr();
                            const T* g = n.grad.ptr();
                            for (std::int64_t o = 0; o < outer; ++o) {
                              const T* src = g + o * out_row + offsets[k];
                              T* dst = gx + o * row;
                              for (std::int64_t i = 0; i < row; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, x.rank());
  if (start < 0 || length < 0 || start + length > x.dim(ax)) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range on axis " + std::to_string(ax) + " of " +
                     shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::int64_t outer = 1;
  for (int d = 0; d < ax; ++d) outer *= out_shape[d];
  std::int64_t inner = 1;
  for (int d = ax + 1; d < x.rank(); ++d) inner *= out_shape[d];
  const std::int64_t in_row = x.dim(ax) * inner;
  const std::int64_t out_row = length * inner;
  const std::int64_t off = start * inner;

  Tensor<T> out(out_shape);
  const T* src = x.value().ptr();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy(src + o * in_row + off, src + o * in_row + off + out_row, out.ptr() + o * out_row);
  }
  return make_result<T>(std::move(out), {x}, "slice", [outer, in_row, out_row, off](Node<T>& n) {
    Node<T>& X = *n.parents[0];
    T* gx = X.grad_buffer().ptr();
    const T* g = n.grad.ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < out_row; ++i) gx[o * in_row + off + i] += g[o * out_row + i];
    }
  });
}

template <typename T>
Var<T> flip_w(const Var<T>& x) {
  if (x.rank() < 1) throw ShapeError("flip_w on a scalar");
  const std::int64_t w = x.dim(-1);
  const std::int64_t rows = x.size() / std::max<std::int64_t>(w, 1);
  Tensor<T> out(x.shape());
  const T* src = x.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < w; ++j) out[r * w + j] = src[r * w + (w - 1 - j)];
  }
  return make_result<T>(std::move(out), {x}, "flip_w", [rows, w](Node<T>& n) {
    T* gx = n.parents[0]->grad_buffer().ptr();
    const T* g = n.grad.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < w; ++j) gx[r * w + (w - 1 - j)] += g[r * w + j];
    }
  });
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.value().data()) acc += static_cast<double>(v);
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {x}, "sum", [](Node<T>& n) {
    Node<T>& X = *n.parents[0];
    T* gx = X.grad_buffer().ptr();
    const T g = n.grad[0];
    for (std::int64_t i = 0; i < X.value.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0.0;
  for (T v : x.value().data()) acc += static_cast<double>(v);
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc * inv)), {x}, "mean",
                        [inv](Node<T>& n) {
                          Node<T>& X = *n.parents[0];
                          T* gx = X.grad_buffer().ptr();
                          const T g = static_cast<T>(n.grad[0] * inv);
                          for (std::int64_t i = 0; i < X.value.size(); ++i) gx[i] += g;
                        });
}

template <typename T>
Var<T> sum_dims(const Var<T>& x, const std::vector<int>& axes) {
  Shape out_shape = x.shape();
  for (int a : axes) out_shape[normalize_axis(a, x.rank())] = 1;
  const auto in_strides = detail::aligned_strides(x.shape(), x.shape());
  const auto out_strides = detail::aligned_strides(out_shape, x.shape());
  std::vector<double> acc(static_cast<std::size_t>(numel(out_shape)), 0.0);
  const T* px = x.value().ptr();
  detail::for_each_broadcast(x.shape(), in_strides, out_strides,
                             [&](std::int64_t, std::int64_t i, std::int64_t o) {
                               acc[static_cast<std::size_t>(o)] += static_cast<double>(px[i]);
                             });
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[static_cast<std::int64_t>(i)] = static_cast<T>(acc[i]);
  return make_result<T>(std::move(out), {x}, "sum_dims",
                        [in_strides, out_strides](Node<T>& n) {
                          Node<T>& X = *n.parents[0];
                          T* gx = X.grad_buffer().ptr();
                          const T* g = n.grad.ptr();
                          detail::for_each_broadcast(
                              X.value.shape(), in_strides, out_strides,
                              [&](std::int64_t, std::int64_t i, std::int64_t o) { gx[i] += g[o]; });
                        });
}

template <typename T>
Var<T> mean_dims(const Var<T>& x, const std::vector<int>& axes) {
  std::int64_t count = 1;
  for (int a : axes) count *= x.dim(normalize_axis(a, x.rank()));
  if (count == 0) throw ShapeError("mean over an empty axis");
  return mul_scalar(sum_dims(x, axes), T(1) / static_cast<T>(count));
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> grad_x(const Var<T>& x) {
  if (x.rank() < 2 || x.dim(-1) < 2) throw ShapeError("grad_x needs width >= 2, got " + shape_string(x.shape()));
  const std::int64_t w = x.dim(-1);
  const std::int64_t rows = x.size() / w;
  Shape out_shape = x.shape();
  out_shape.back() = w - 1;
  Tensor<T> out(out_shape);
  const T* px = x.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j + 1 < w; ++j) out[r * (w - 1) + j] = px[r * w + j + 1] - px[r * w + j];
  }
  return make_result<T>(std::move(out), {x}, "grad_x", [rows, w](Node<T>& n) {
    T* gx = n.parents[0]->grad_buffer().ptr();
    const T* g = n.grad.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j + 1 < w; ++j) {
        const T v = g[r * (w - 1) + j];
        gx[r * w + j + 1] += v;
        gx[r * w + j] -= v;
      }
    }
  });
}

template <typename T>
Var<T> grad_y(const Var<T>& x) {
  if (x.rank() < 2 || x.dim(-2) < 2) throw ShapeError("grad_y needs height >= 2, got " + shape_string(x.shape()));
  const std::int64_t w = x.dim(-1);
  const std::int64_t h = x.dim(-2);
  const std::int64_t planes = x.size() / (w * h);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = h - 1;
  Tensor<T> out(out_shape);
  const T* px = x.value().ptr();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t i = 0; i + 1 < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        out[(p * (h - 1) + i) * w + j] = px[(p * h + i + 1) * w + j] - px[(p * h + i) * w + j];
      }
    }
  }
  return make_result<T>(std::move(out), {x}, "grad_y", [planes, h, w](Node<T>& n) {
    T* gx = n.parents[0]->grad_buffer().ptr();
    const T* g = n.grad.ptr();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t i = 0; i + 1 < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
          const T v = g[(p * (h - 1) + i) * w + j];
          gx[(p * h + i + 1) * w + j] += v;
          gx[(p * h + i) * w + j] -= v;
        }
      }
    }
  });
}

#define RTSMONO_INSTANTIATE(T)                                                       \
  template Var<T> constant<T>(Tensor<T>);                                            \
  template Var<T> full_like<T>(const Var<T>&, Scalar<T>);                            \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> minimum<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> maximum<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> add_scalar<T>(const Var<T>&, Scalar<T>);                           \
  template Var<T> mul_scalar<T>(const Var<T>&, Scalar<T>);                           \
  template Var<T> rdiv_scalar<T>(Scalar<T>, const Var<T>&);                          \
  template Var<T> neg<T>(const Var<T>&);                                             \
  template Var<T> abs<T>(const Var<T>&);                                             \
  template Var<T> square<T>(const Var<T>&);                                          \
  template Var<T> sqrt<T>(const Var<T>&);                                            \
  template Var<T> exp<T>(const Var<T>&);                                             \
  template Var<T> log<T>(const Var<T>&);                                             \
  template Var<T> sigmoid<T>(const Var<T>&);                                         \
  template Var<T> tanh<T>(const Var<T>&);                                            \
  template Var<T> relu<T>(const Var<T>&);                                            \
  template Var<T> elu<T>(const Var<T>&);                                             \
  template Var<T> gelu<T>(const Var<T>&);                                            \
  template Var<T> clamp<T>(const Var<T>&, Scalar<T>, Scalar<T>);                     \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                  \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                        \
  template Var<T> slice<T>(const Var<T>&, int, std::int64_t, std::int64_t);          \
  template Var<T> flip_w<T>(const Var<T>&);                                          \
  template Var<T> sum<T>(const Var<T>&);                                             \
  template Var<T> mean<T>(const Var<T>&);                                            \
  template Var<T> sum_dims<T>(const Var<T>&, const std::vector<int>&);               \
  template Var<T> mean_dims<T>(const Var<T>&, const std::vector<int>&);              \
  template Var<T> grad_x<T>(const Var<T>&);                                          \
  template Var<T> grad_y<T>(const Var<T>&);

RTSMONO_INSTANTIATE(float)
RTSMONO_INSTANTIATE(double)
#undef RTSMONO_INSTANTIATE

}  // namespace rtsmono
