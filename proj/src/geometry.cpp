#include "shapeforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shapeforge {

std::array<double, 4> Viewpoint::encode() const {
  return {std::cos(azimuth), std::sin(azimuth), std::cos(elevation), std::sin(elevation)};
}

bool Viewpoint::legal() const {
  return std::isfinite(azimuth) && std::isfinite(elevation) && std::abs(elevation) <= kMaxElevation;
}

std::vector<Viewpoint> view_ring(int count, double elevation) {
  std::vector<Viewpoint> views;
  views.reserve(count);
  for (int i = 0; i < count; ++i) {
    views.push_back({2.0 * std::numbers::pi * i / count, elevation});
  }
  return views;
}

Camera::Camera(const Viewpoint& view, const CameraOptions& options)
    : tan_half_fov_(std::tan(0.5 * options.fov_y)) {
  const double ce = std::cos(view.elevation);
  eye_ = options.distance * Vec3(ce * std::sin(view.azimuth), std::sin(view.elevation),
                                 ce * std::cos(view.azimuth));
  forward_ = (-eye_).normalized();
  right_ = forward_.cross(Vec3::UnitY()).normalized();
  up_ = right_.cross(forward_);
}

Vec3 Camera::ray(int row, int col, int resolution) const {
  const double u = ((col + 0.5) / resolution * 2.0 - 1.0) * tan_half_fov_;
  const double v = (1.0 - (row + 0.5) / resolution * 2.0) * tan_half_fov_;
  return (forward_ + u * right_ + v * up_).normalized();
}

Eigen::Vector2d Camera::project(const Vec3& point, int resolution) const {
  const Vec3 d = point - eye_;
  const double z = d.dot(forward_);
  const double u = d.dot(right_) / z / tan_half_fov_;
  const double v = d.dot(up_) / z / tan_half_fov_;
  return {(1.0 - v) * 0.5 * resolution, (u + 1.0) * 0.5 * resolution};
}

bool clip_to_cube(const Vec3& origin, const Vec3& dir, double half, double& t_enter, double& t_exit) {
  t_enter = 0.0;
  t_exit = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(dir[axis]) < 1e-15) {
      if (std::abs(origin[axis]) > half) return false;
      continue;
    }
    double t0 = (-half - origin[axis]) / dir[axis];
    double t1 = (half - origin[axis]) / dir[axis];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  return t_enter < t_exit;
}

}  // namespace shapeforge
