#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbev/numerics/sampling.hpp"

namespace vbev {

enum class GridKind { hr, lr };

// BEV grid and metric conventions. Cell coordinates are corner-origin: cell
// (row i, col j) spans [j, j+1] x [i, i+1] and maps linearly onto the metric
// range, x along columns and y along rows. Right-handed frame, Z up.
struct BevSpec {
  std::size_t h_lr = 32, w_lr = 32;
  std::size_t h_hr = 64, w_hr = 64;
  double x_min = -16.0, x_max = 16.0;
  double y_min = -16.0, y_max = 16.0;
  std::vector<double> z_levels{-1.0, 1.0 / 3.0, 5.0 / 3.0, 3.0};

  void validate() const {
    if (h_lr == 0 || w_lr == 0) throw std::invalid_argument("BevSpec: empty LR grid");
    if (h_hr < h_lr || w_hr < w_lr) throw std::invalid_argument("BevSpec: HR grid coarser than LR");
    if (!(x_max > x_min) || !(y_max > y_min)) throw std::invalid_argument("BevSpec: empty range");
    if (z_levels.empty()) throw std::invalid_argument("BevSpec: no pillar heights");
    for (std::size_t i = 1; i < z_levels.size(); ++i)
      if (!(z_levels[i] > z_levels[i - 1])) throw std::invalid_argument("BevSpec: z_levels not increasing");
  }

  double x_range() const { return x_max - x_min; }
  double y_range() const { return y_max - y_min; }
  std::size_t width(GridKind g) const { return g == GridKind::hr ? w_hr : w_lr; }
  std::size_t height(GridKind g) const { return g == GridKind::hr ? h_hr : h_lr; }
};

// Evenly spaced pillar heights over [lo, hi].
inline std::vector<double> even_levels(std::size_t n, double lo = -1.0, double hi = 3.0) {
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
  return z;
}

inline Vec2<double> cell_to_world(const BevSpec& s, GridKind g, Vec2<double> c) {
  return {s.x_min + c[0] * s.x_range() / double(s.width(g)),
          s.y_min + c[1] * s.y_range() / double(s.height(g))};
}

inline Vec2<double> world_to_cell(const BevSpec& s, GridKind g, Vec2<double> p) {
  return {(p[0] - s.x_min) * double(s.width(g)) / s.x_range(),
          (p[1] - s.y_min) * double(s.height(g)) / s.y_range()};
}

inline Vec2<double> hr_cell_to_world(const BevSpec& s, Vec2<double> c) { return cell_to_world(s, GridKind::hr, c); }
inline Vec2<double> world_to_hr_cell(const BevSpec& s, Vec2<double> p) { return world_to_cell(s, GridKind::hr, p); }

inline Vec2<double> hr_to_lr_scale(const BevSpec& s) {
  return {double(s.w_lr) / double(s.w_hr), double(s.h_lr) / double(s.h_hr)};
}

inline Vec2<double> hr_to_lr_coords(const BevSpec& s, Vec2<double> c) {
  const auto k = hr_to_lr_scale(s);
  return {c[0] * k[0], c[1] * k[1]};
}

// Differentiable variant over an N x 2 coordinate tensor.
template <typename T>
Tensor<T> hr_to_lr_coords(const BevSpec& s, const Tensor<T>& c) {
  const auto k = hr_to_lr_scale(s);
  std::vector<T> f(c.numel());
  for (std::size_t i = 0; i < c.dim(0); ++i) {
    f[2 * i] = T(k[0]);
    f[2 * i + 1] = T(k[1]);
  }
  return mul_const<T>(c, f);
}

struct Camera {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();  // world (ego) -> camera
  std::size_t image_h = 64, image_w = 64;

  // Camera frame: x right, y down, z forward.
  Eigen::Vector3d to_camera(const Eigen::Vector3d& p) const {
    return extrinsics.topLeftCorner<3, 3>() * p + extrinsics.topRightCorner<3, 1>();
  }
  Eigen::Vector3d from_camera(const Eigen::Vector3d& pc) const {
    const Eigen::Matrix3d r = extrinsics.topLeftCorner<3, 3>();
    return r.transpose() * (pc - extrinsics.topRightCorner<3, 1>());
  }
};

inline bool rotation_is_orthonormal(const Eigen::Matrix3d& r, double tol = 1e-9) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol;
}

struct CameraRig {
  std::vector<Camera> cameras;

  void validate() const {
    for (const auto& c : cameras) {
      const auto& k = c.intrinsics;
      if (k(1, 0) != 0 || k(2, 0) != 0 || k(2, 1) != 0 || !(k(0, 0) > 0) || !(k(1, 1) > 0)) {
        throw std::invalid_argument("CameraRig: intrinsics must be upper triangular with positive focals");
      }
      if (!rotation_is_orthonormal(c.extrinsics.topLeftCorner<3, 3>())) {
        throw std::invalid_argument("CameraRig: extrinsic rotation not orthonormal");
      }
    }
  }
};

struct RigSpec {
  std::size_t cameras = 4;
  double fov_deg = 100.0;
  std::size_t image_h = 64, image_w = 64;
  double mount_height = 1.5;
};

// Cameras evenly spaced in yaw around the ego origin, looking horizontally.
inline CameraRig make_surround_rig(const RigSpec& spec) {
  CameraRig rig;
  const double f = (double(spec.image_w) / 2.0) / std::tan(spec.fov_deg * std::numbers::pi / 360.0);
  for (std::size_t i = 0; i < spec.cameras; ++i) {
    const double yaw = 2.0 * std::numbers::pi * double(i) / double(spec.cameras);
    const Eigen::Vector3d fwd(std::cos(yaw), std::sin(yaw), 0.0);
    const Eigen::Vector3d right(std::sin(yaw), -std::cos(yaw), 0.0);
    const Eigen::Vector3d down(0.0, 0.0, -1.0);
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = fwd;
    const Eigen::Vector3d center(0.0, 0.0, spec.mount_height);
    Camera cam;
    cam.intrinsics << f, 0, spec.image_w / 2.0, 0, f, spec.image_h / 2.0, 0, 0, 1;
    cam.extrinsics.setIdentity();
    cam.extrinsics.topLeftCorner<3, 3>() = r;
    cam.extrinsics.topRightCorner<3, 1>() = -r * center;
    cam.image_h = spec.image_h;
    cam.image_w = spec.image_w;
    rig.cameras.push_back(cam);
  }
  return rig;
}

struct Projection {
  Vec2<double> uv{0.0, 0.0};
  double depth = 0.0;
  bool visible = false;
};

inline Projection project_point(const Camera& cam, const Eigen::Vector3d& p) {
  const Eigen::Vector3d pc = cam.to_camera(p);
  Projection out;
  out.depth = pc.z();
  if (!(pc.z() > 0.0)) return out;
  const Eigen::Vector3d h = cam.intrinsics * pc;
  const double u = h.x() / h.z(), v = h.y() / h.z();
  if (u >= 0.0 && u < double(cam.image_w) && v >= 0.0 && v < double(cam.image_h)) {
    out.uv = {u, v};
    out.visible = true;
  }
  return out;
}

// Result indexed [camera][point].
inline std::vector<std::vector<Projection>> project_to_cameras(const CameraRig& rig,
                                                               const std::vector<Eigen::Vector3d>& pts) {
  std::vector<std::vector<Projection>> out(rig.cameras.size());
  for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
    out[c].reserve(pts.size());
    for (const auto& p : pts) out[c].push_back(project_point(rig.cameras[c], p));
  }
  return out;
}

// Back-projects pixel (u, v) at camera-frame depth into the world frame.
inline Eigen::Vector3d unproject(const Camera& cam, Vec2<double> uv, double depth) {
  const Eigen::Vector3d ray = cam.intrinsics.inverse() * Eigen::Vector3d(uv[0], uv[1], 1.0);
  return cam.from_camera(ray * depth);
}

// One point per pillar height for every coordinate, ordered by coordinate and
// then by increasing Z.
inline std::vector<Eigen::Vector3d> make_pillar_points(const BevSpec& s, const std::vector<Vec2<double>>& coords,
                                                       GridKind g) {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(coords.size() * s.z_levels.size());
  for (const auto& c : coords) {
    const auto xy = cell_to_world(s, g, c);
    for (double z : s.z_levels) pts.emplace_back(xy[0], xy[1], z);
  }
  return pts;
}

// Rigid ego-to-world transform.
struct EgoPose {
  Eigen::Matrix4d ego_to_world = Eigen::Matrix4d::Identity();

  static EgoPose from_xy_yaw(double x, double y, double yaw) {
    EgoPose p;
    p.ego_to_world.topLeftCorner<3, 3>() = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    p.ego_to_world(0, 3) = x;
    p.ego_to_world(1, 3) = y;
    return p;
  }
  void validate() const {
    if (!rotation_is_orthonormal(ego_to_world.topLeftCorner<3, 3>()))
      throw std::invalid_argument("EgoPose: rotation not orthonormal");
  }
  Eigen::Matrix4d inverse() const {
    Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
    const Eigen::Matrix3d rt = ego_to_world.topLeftCorner<3, 3>().transpose();
    inv.topLeftCorner<3, 3>() = rt;
    inv.topRightCorner<3, 1>() = -rt * ego_to_world.topRightCorner<3, 1>();
    return inv;
  }
};

// Transform taking points in the current ego frame to the previous ego frame.
inline Eigen::Matrix4d relative_transform(const EgoPose& current, const EgoPose& previous) {
  return previous.inverse() * current.ego_to_world;
}

}  // namespace vbev
