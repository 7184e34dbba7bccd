#pragma once

#include <array>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace shapeforge {

using Vec3 = Eigen::Vector3d;

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Elevation of the training view ring.
inline constexpr double kRingElevation = deg_to_rad(20.0);
// Cameras are rejected beyond this elevation; the look-at frame degenerates at the poles.
inline constexpr double kMaxElevation = deg_to_rad(85.0);

struct Viewpoint {
  double azimuth = 0.0;    // radians
  double elevation = 0.0;  // radians

  // (cos az, sin az, cos el, sin el): one point on each of two unit circles.
  std::array<double, 4> encode() const;
  bool legal() const;
};

// `count` azimuths evenly spaced over [0, 2pi) at a fixed elevation.
std::vector<Viewpoint> view_ring(int count = 8, double elevation = kRingElevation);

struct CameraOptions {
  double distance = 2.0;
  double fov_y = deg_to_rad(50.0);
};

// Pinhole camera on a sphere around the origin, looking at the origin with +y up.
// Azimuth 0 / elevation 0 puts the eye on the +z axis.
class Camera {
 public:
  Camera(const Viewpoint& view, const CameraOptions& options = {});

  const Vec3& eye() const { return eye_; }
  const Vec3& forward() const { return forward_; }

  // Unit ray through the centre of pixel (row, col); row 0 is the top of the image.
  Vec3 ray(int row, int col, int resolution) const;

  // Inverse of `ray` for points in front of the camera; returns (row, col) in
  // continuous pixel units.
  Eigen::Vector2d project(const Vec3& point, int resolution) const;

 private:
  Vec3 eye_;
  Vec3 forward_;
  Vec3 right_;
  Vec3 up_;
  double tan_half_fov_;
};

// Parametric interval of the ray inside the axis-aligned cube [-half, half]^3.
// Returns false when the ray misses the cube or the cube is behind the origin.
bool clip_to_cube(const Vec3& origin, const Vec3& dir, double half, double& t_enter, double& t_exit);

}  // namespace shapeforge
