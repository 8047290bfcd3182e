#include "rtsmono/camera.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rtsmono/ops.hpp"

namespace rtsmono {

// ---------------------------------------------------------------------------
// Intrinsics

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height)) {
    throw std::invalid_argument("intrinsics: principal point (" + std::to_string(cx) + ", " +
                                std::to_string(cy) + ") outside " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
}

Intrinsics Intrinsics::scaled_to(int new_width, int new_height) const {
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  Intrinsics k = *this;
  k.fx = fx * sx;
  k.cx = cx * sx;
  k.fy = fy * sy;
  k.cy = cy * sy;
  k.width = new_width;
  k.height = new_height;
  return k;
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d m;
  m << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return m;
}

Intrinsics Intrinsics::read(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open intrinsics file " + path.string());
  std::array<double, 9> m{};
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(in >> m[i])) {
      throw std::runtime_error("malformed intrinsics file " + path.string() + ": expected 9 numbers, read " +
                               std::to_string(i));
    }
  }
  std::string extra;
  if (in >> extra) throw std::runtime_error("malformed intrinsics file " + path.string() + ": trailing data");
  if (m[1] != 0 || m[3] != 0 || m[6] != 0 || m[7] != 0 || m[8] != 1) {
    throw std::runtime_error("malformed intrinsics file " + path.string() + ": not a pinhole K matrix");
  }
  Intrinsics k{m[0], m[4], m[2], m[5], width, height};
  try {
    k.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("malformed intrinsics file " + path.string() + ": " + e.what());
  }
  return k;
}

void Intrinsics::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write intrinsics file " + path.string());
  out.precision(17);
  out << fx << ' ' << 0.0 << ' ' << cx << '\n'
      << 0.0 << ' ' << fy << ' ' << cy << '\n'
      << 0.0 << ' ' << 0.0 << ' ' << 1.0 << '\n';
}

// ---------------------------------------------------------------------------
// PoseSE3 / DepthMap

PoseSE3 PoseSE3::inverse() const {
  PoseSE3 inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

PoseSE3 PoseSE3::operator*(const PoseSE3& rhs) const {
  PoseSE3 out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

void PoseSE3::validate(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= tol)) throw std::invalid_argument("pose: rotation is not orthonormal");
  if (!(std::abs(rotation.determinant() - 1.0) <= tol)) {
    throw std::invalid_argument("pose: rotation determinant is not +1");
  }
  if (!translation.allFinite()) throw std::invalid_argument("pose: non-finite translation");
}

void DepthMap::clamp_to_bounds() {
  for (auto& v : values.data()) {
    v = static_cast<float>(std::clamp(static_cast<double>(v), valid_min, valid_max));
  }
}

// ---------------------------------------------------------------------------
// Rodrigues

namespace {

// R = I + A K + B K^2 with K = [v]x, s = |v|^2; returns A, B and their s-derivatives.
struct RodriguesCoeffs {
  double a, b, da, db;
};

RodriguesCoeffs rodrigues_coeffs(double s) {
  if (s < 1e-4) {
    return {1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0,
            0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0,
            -1.0 / 6.0 + s / 60.0 - s * s / 1680.0,
            -1.0 / 24.0 + s / 360.0 - s * s / 13440.0};
  }
  const double th = std::sqrt(s);
  const double sn = std::sin(th), cs = std::cos(th);
  return {sn / th, (1.0 - cs) / s, (th * cs - sn) / (2.0 * s * th),
          (th * sn - 2.0 * (1.0 - cs)) / (2.0 * s * s)};
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& v) {
  const auto c = rodrigues_coeffs(v.squaredNorm());
  const Eigen::Matrix3d k = skew(v);
  return Eigen::Matrix3d::Identity() + c.a * k + c.b * k * k;
}

}  // namespace

PoseSE3 axis_angle_to_se3(const std::array<double, 6>& params) {
  PoseSE3 p;
  p.rotation = rodrigues(Eigen::Vector3d(params[0], params[1], params[2]));
  p.translation = Eigen::Vector3d(params[3], params[4], params[5]);
  return p;
}

template <typename T>
RigidTransform<T> RigidTransform<T>::identity(std::int64_t batch) {
  Tensor<T> r({batch, 3, 3});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (int i = 0; i < 3; ++i) r[b * 9 + i * 4] = T(1);
  }
  return {Var<T>(std::move(r)), Var<T>(Tensor<T>({batch, 3}))};
}

template <typename T>
RigidTransform<T> RigidTransform<T>::from_poses(const std::vector<PoseSE3>& poses) {
  const auto batch = static_cast<std::int64_t>(poses.size());
  Tensor<T> r({batch, 3, 3});
  Tensor<T> t({batch, 3});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) r[b * 9 + i * 3 + j] = static_cast<T>(poses[b].rotation(i, j));
      t[b * 3 + i] = static_cast<T>(poses[b].translation(i));
    }
  }
  return {Var<T>(std::move(r)), Var<T>(std::move(t))};
}

template <typename T>
RigidTransform<T> axis_angle_to_se3(const Var<T>& params) {
  if (params.rank() != 2 || params.dim(1) != 6) {
    throw ShapeError("axis_angle_to_se3: params must be [N,6], got " + shape_string(params.shape()));
  }
  const std::int64_t batch = params.dim(0);
  Tensor<T> r({batch, 3, 3});
  const T* p = params.value().ptr();
  for (std::int64_t b = 0; b < batch; ++b) {
    const Eigen::Matrix3d m = rodrigues(Eigen::Vector3d(p[b * 6], p[b * 6 + 1], p[b * 6 + 2]));
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) r[b * 9 + i * 3 + j] = static_cast<T>(m(i, j));
    }
  }
  Var<T> rotation = make_result<T>(std::move(r), {params}, "rodrigues", [batch](Node<T>& n) {
    Node<T>& P = *n.parents[0];
    T* gp = P.grad_buffer().ptr();
    const T* pv = P.value.ptr();
    const T* g = n.grad.ptr();
    for (std::int64_t b = 0; b < batch; ++b) {
      const Eigen::Vector3d v(pv[b * 6], pv[b * 6 + 1], pv[b * 6 + 2]);
      Eigen::Matrix3d gm;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) gm(i, j) = static_cast<double>(g[b * 9 + i * 3 + j]);
      }
      const auto c = rodrigues_coeffs(v.squaredNorm());
      const Eigen::Matrix3d k = skew(v);
      const Eigen::Matrix3d k2 = k * k;
      for (int i = 0; i < 3; ++i) {
        const Eigen::Matrix3d dk = skew(Eigen::Vector3d::Unit(i));
        const Eigen::Matrix3d dr =
            c.a * dk + c.b * (dk * k + k * dk) + 2.0 * v(i) * (c.da * k + c.db * k2);
        gp[b * 6 + i] += static_cast<T>((gm.array() * dr.array()).sum());
      }
    }
  });
  Var<T> translation = reshape(slice(params, 1, 3, 3), Shape{batch, 3});
  return {rotation, translation};
}

// ---------------------------------------------------------------------------
// Projection pipeline

template <typename T>
Var<T> backproject(const Var<T>& depth, const Intrinsics& K) {
  if (depth.rank() != 4 || depth.dim(1) != 1) {
    throw ShapeError("backproject: depth must be [N,1,H,W], got " + shape_string(depth.shape()));
  }
  const std::int64_t h = depth.dim(2), w = depth.dim(3);
  if (h != K.height || w != K.width) {
    throw ShapeError("backproject: depth is " + std::to_string(w) + "x" + std::to_string(h) +
                     " but intrinsics describe " + std::to_string(K.width) + "x" + std::to_string(K.height));
  }
  for (T v : depth.value().data()) {
    if (!(v > T(0)) || !std::isfinite(v)) throw std::domain_error("backproject: depth must be positive and finite");
  }
  Tensor<T> rx({1, 1, h, w});
  Tensor<T> ry({1, 1, h, w});
  for (std::int64_t v = 0; v < h; ++v) {
    for (std::int64_t u = 0; u < w; ++u) {
      rx[v * w + u] = static_cast<T>((static_cast<double>(u) - K.cx) / K.fx);
      ry[v * w + u] = static_cast<T>((static_cast<double>(v) - K.cy) / K.fy);
    }
  }
  return concat<T>({depth * constant(std::move(rx)), depth * constant(std::move(ry)), depth}, 1);
}

template <typename T>
Projection<T> project(const Var<T>& points, const Intrinsics& K, const RigidTransform<T>& pose) {
  if (points.rank() != 4 || points.dim(1) != 3) {
    throw ShapeError("project: points must be [N,3,H,W], got " + shape_string(points.shape()));
  }
  const std::int64_t n = points.dim(0), h = points.dim(2), w = points.dim(3);
  if (pose.batch() != n) {
    throw ShapeError("project: pose batch " + std::to_string(pose.batch()) + " vs points batch " + std::to_string(n));
  }
  auto r = [&](int i, int j) {
    return reshape(slice(slice(pose.rotation, 1, i, 1), 2, j, 1), Shape{n, 1, 1, 1});
  };
  auto t = [&](int i) { return reshape(slice(pose.translation, 1, i, 1), Shape{n, 1, 1, 1}); };
  const Var<T> x = slice(points, 1, 0, 1);
  const Var<T> y = slice(points, 1, 1, 1);
  const Var<T> z = slice(points, 1, 2, 1);
  const Var<T> xp = r(0, 0) * x + r(0, 1) * y + r(0, 2) * z + t(0);
  const Var<T> yp = r(1, 0) * x + r(1, 1) * y + r(1, 2) * z + t(1);
  const Var<T> zp = r(2, 0) * x + r(2, 1) * y + r(2, 2) * z + t(2);

  Tensor<T> valid({n, 1, h, w});
  for (std::int64_t i = 0; i < valid.size(); ++i) {
    valid[i] = zp.value()[i] > static_cast<T>(kNearPlane) ? T(1) : T(0);
  }
  const Var<T> zs = maximum(zp, constant(Tensor<T>({1}, static_cast<T>(kNearPlane))));
  const Var<T> mask = constant(valid);
  const Var<T> u = (xp / zs * static_cast<T>(K.fx) + static_cast<T>(K.cx)) * mask;
  const Var<T> v = (yp / zs * static_cast<T>(K.fy) + static_cast<T>(K.cy)) * mask;
  Var<T> grid = concat<T>({reshape(u, Shape{n, h, w, 1}), reshape(v, Shape{n, h, w, 1})}, 3);
  return {grid, valid};
}

template <typename T>
SynthesizedView<T> synthesize_view(const Var<T>& source, const Var<T>& depth,
                                   const RigidTransform<T>& pose, const Intrinsics& K) {
  if (source.rank() != 4 || source.dim(2) != depth.dim(2) || source.dim(3) != depth.dim(3) ||
      source.dim(0) != depth.dim(0)) {
    throw ShapeError("synthesize_view: source " + shape_string(source.shape()) +
                     " not aligned with depth " + shape_string(depth.shape()));
  }
  auto proj = project(backproject(depth, K), K, pose);
  return {bilinear_sample(source, proj.grid), std::move(proj.valid)};
}

template struct RigidTransform<float>;
template struct RigidTransform<double>;

#define RTSMONO_INSTANTIATE(T)                                                                     \
  template RigidTransform<T> axis_angle_to_se3<T>(const Var<T>&);                                  \
  template Var<T> backproject<T>(const Var<T>&, const Intrinsics&);                                \
  template Projection<T> project<T>(const Var<T>&, const Intrinsics&, const RigidTransform<T>&);   \
  template SynthesizedView<T> synthesize_view<T>(const Var<T>&, const Var<T>&,                     \
                                                 const RigidTransform<T>&, const Intrinsics&);

RTSMONO_INSTANTIATE(float)
RTSMONO_INSTANTIATE(double)
#undef RTSMONO_INSTANTIATE

}  // namespace rtsmono
