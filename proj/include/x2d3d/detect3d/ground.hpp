#pragma once

#include <cmath>
#include <cstdint>

#include "x2d3d/core/random.hpp"
#include "x2d3d/detect3d/point_cloud.hpp"

namespace x2d3d {

struct GroundParams {
  double inlier_distance = 0.2;   // m
  int iterations = 200;
  double max_tilt_deg = 15.0;     // allowed angle between plane normal and up axis
  double min_inlier_fraction = 0.3;
  std::uint64_t seed = 7;
};

struct PlaneFit {
  Point3 normal = Point3::UnitZ();
  double offset = 0.0;  // n . x + offset = 0
  std::size_t inliers = 0;
};

/// Dominant plane by RANSAC over random point triples.
inline PlaneFit fit_dominant_plane(const PointCloud& cloud, const GroundParams& params) {
  Rng rng = make_rng(params.seed, 0x6a0d);
  PlaneFit best;
  const std::size_t n = cloud.size();
  const double tol = params.inlier_distance;
  for (int it = 0; it < params.iterations; ++it) {
    const std::size_t a = uniform_index(rng, n), b = uniform_index(rng, n), c = uniform_index(rng, n);
    if (a == b || b == c || a == c) continue;
    Point3 normal = (cloud.points[b] - cloud.points[a]).cross(cloud.points[c] - cloud.points[a]);
    const double len = normal.norm();
    if (len < 1e-12) continue;
    normal /= len;
    const double offset = -normal.dot(cloud.points[a]);
    std::size_t count = 0;
    for (const auto& p : cloud.points) count += std::abs(normal.dot(p) + offset) <= tol;
    if (count > best.inliers) best = {normal, offset, count};
  }
  return best;
}

/// Drops the points of the dominant plane when it is a near-horizontal plane
/// (normal within max_tilt of `up`) holding at least min_inlier_fraction of
/// the cloud; otherwise the cloud comes back unchanged.
inline PointCloud remove_ground_plane(const PointCloud& cloud, const Point3& up, const GroundParams& params = {}) {
  if (cloud.size() < 50) throw Error(ErrorCode::kTooFewPoints, "ground removal needs at least 50 points");
  const PlaneFit plane = fit_dominant_plane(cloud, params);
  const double fraction = static_cast<double>(plane.inliers) / static_cast<double>(cloud.size());
  const double cos_tilt = std::abs(plane.normal.dot(up.normalized()));
  if (fraction < params.min_inlier_fraction || cos_tilt < std::cos(deg2rad(params.max_tilt_deg))) return cloud;

  PointCloud out;
  out.frame = cloud.frame;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (std::abs(plane.normal.dot(cloud.points[i]) + plane.offset) <= params.inlier_distance) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.has_intensity()) out.intensity.push_back(cloud.intensity[i]);
  }
  if (out.empty()) throw Error(ErrorCode::kTooFewPointsRemaining, "every point lies on the ground plane");
  return out;
}

}  // namespace x2d3d
