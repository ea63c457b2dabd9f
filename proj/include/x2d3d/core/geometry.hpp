#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "x2d3d/core/error.hpp"

namespace x2d3d {

using Point3 = Eigen::Vector3d;
using Pixel2 = Eigen::Vector2d;
using Matrix3 = Eigen::Matrix3d;

inline constexpr double kMinDepth = 1e-6;

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline Matrix3 rot_x(double rad) { return Eigen::AngleAxisd(rad, Point3::UnitX()).toRotationMatrix(); }
inline Matrix3 rot_y(double rad) { return Eigen::AngleAxisd(rad, Point3::UnitY()).toRotationMatrix(); }
inline Matrix3 rot_z(double rad) { return Eigen::AngleAxisd(rad, Point3::UnitZ()).toRotationMatrix(); }

// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
inline Matrix3 orthonormalize(const Matrix3& m) {
  Eigen::JacobiSVD<Matrix3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3 u = svd.matrixU();
  const Matrix3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

inline bool is_rotation(const Matrix3& r, double tol = 1e-9) {
  const double ortho = (r.transpose() * r - Matrix3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

/// Rigid transform x -> R x + t. Camera poses map world (map frame) points
/// into the camera frame (x right, y down, z forward).
class PoseSE3 {
 public:
  PoseSE3() : rotation_(Matrix3::Identity()), translation_(Point3::Zero()) {}

  /// Re-orthonormalizes `rotation` when it is off SO(3) by more than 1e-9.
  PoseSE3(const Matrix3& rotation, const Point3& translation)
      : rotation_(is_rotation(rotation) ? rotation : orthonormalize(rotation)),
        translation_(translation) {
    if (!rotation_.allFinite() || !translation_.allFinite()) {
      throw Error(ErrorCode::kConfigInvalid, "pose with non-finite entries");
    }
  }

  static PoseSE3 identity() { return {}; }

  const Matrix3& rotation() const { return rotation_; }
  const Point3& translation() const { return translation_; }

  Point3 operator()(const Point3& x) const { return rotation_ * x + translation_; }

  /// Position of the transform's origin expressed in the source frame
  /// (for a world-to-camera pose this is the camera center).
  Point3 center() const { return -rotation_.transpose() * translation_; }

  Eigen::Matrix<double, 3, 4> matrix3x4() const {
    Eigen::Matrix<double, 3, 4> m;
    m.leftCols<3>() = rotation_;
    m.col(3) = translation_;
    return m;
  }

 private:
  Matrix3 rotation_;
  Point3 translation_;
};

/// compose(a, b) maps x to a(b(x)).
inline PoseSE3 compose(const PoseSE3& a, const PoseSE3& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

inline PoseSE3 invert(const PoseSE3& a) {
  const Matrix3 rt = a.rotation().transpose();
  return {rt, -rt * a.translation()};
}

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 && cy < height;
  }

  bool contains(const Pixel2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1 && px.y() <= height - 1;
  }

  /// Point in the camera frame at depth `depth` seen through pixel `px`.
  Point3 back_project(const Pixel2& px, double depth) const {
    return {(px.x() - cx) / fx * depth, (px.y() - cy) / fy * depth, depth};
  }
};

/// Pinhole projection of a camera-frame point. std::nullopt means the point is
/// behind the camera (z <= kMinDepth).
inline std::optional<Pixel2> project_camera(const Point3& pc, const CameraIntrinsics& k) {
  if (!(pc.z() > kMinDepth)) return std::nullopt;
  return Pixel2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
}

inline std::optional<Pixel2> project(const Point3& world, const PoseSE3& pose, const CameraIntrinsics& k) {
  return project_camera(pose(world), k);
}

/// Geodesic angle between two rotations, in degrees.
inline double rotation_error_deg(const Matrix3& ra, const Matrix3& rb) {
  const double c = ((ra.transpose() * rb).trace() - 1.0) / 2.0;
  return rad2deg(std::acos(std::clamp(c, -1.0, 1.0)));
}

/// Distance between the camera centers of two world-to-camera poses.
inline double translation_error_m(const PoseSE3& estimate, const PoseSE3& truth) {
  return (estimate.center() - truth.center()).norm();
}

}  // namespace x2d3d
