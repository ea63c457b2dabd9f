#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <vector>

#include "x2d3d/detect3d/point_cloud.hpp"

namespace x2d3d {

struct Keypoint3D {
  Point3 position = Point3::Zero();
  double saliency = 0.0;  // smallest covariance eigenvalue, m^2
  int neighbor_count = 0;
};

struct IssParams {
  double salient_radius = 1.0;
  double nms_radius = 0.5;
  double gamma21 = 0.9;
  double gamma32 = 0.9;
  int min_neighbors = 10;
  // Neighborhoods with lambda3 <= planar_eps * lambda1 are flat and never salient.
  double planar_eps = 1e-10;

  bool valid() const {
    return salient_radius > 0 && nms_radius > 0 && gamma21 > 0 && gamma21 < 1 && gamma32 > 0 && gamma32 < 1;
  }
};

/// Eigenvalues (descending) of the unweighted covariance of `idx` points.
inline Eigen::Vector3d neighborhood_eigenvalues(const std::vector<Point3>& pts, const std::vector<std::size_t>& idx) {
  Point3 mean = Point3::Zero();
  for (auto i : idx) mean += pts[i];
  mean /= static_cast<double>(idx.size());
  Matrix3 cov = Matrix3::Zero();
  for (auto i : idx) {
    const Point3 d = pts[i] - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(idx.size());
  Eigen::SelfAdjointEigenSolver<Matrix3> es(cov, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();  // ascending
  return {ev(2), ev(1), ev(0)};
}

/// Intrinsic Shape Signatures keypoints, sorted by descending saliency
/// (ties by point index).
inline std::vector<Keypoint3D> detect_iss(const PointCloud& cloud, const IssParams& params = {}) {
  if (cloud.empty()) throw Error(ErrorCode::kEmptyInput, "ISS on an empty cloud");
  if (!params.valid()) throw Error(ErrorCode::kConfigInvalid, "invalid ISS parameters");
  const PointIndex index(cloud.points);
  const std::size_t n = cloud.size();

  constexpr double kNotCandidate = -1.0;
  std::vector<double> lambda3(n, kNotCandidate);
  std::vector<int> counts(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = index.radius(cloud.points[i], params.salient_radius);
    counts[i] = static_cast<int>(nbrs.size());
    if (counts[i] < params.min_neighbors) continue;
    const Eigen::Vector3d ev = neighborhood_eigenvalues(cloud.points, nbrs);
    if (!(ev(0) > 0.0) || !(ev(1) > 0.0)) continue;
    if (!(ev(2) > params.planar_eps * ev(0))) continue;
    if (ev(1) / ev(0) < params.gamma21 && ev(2) / ev(1) < params.gamma32) lambda3[i] = ev(2);
  }

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (lambda3[i] == kNotCandidate) continue;
    bool is_max = true;
    for (auto j : index.radius(cloud.points[i], params.nms_radius)) {
      if (j == i || lambda3[j] == kNotCandidate) continue;
      if (lambda3[j] > lambda3[i] || (lambda3[j] == lambda3[i] && j < i)) {
        is_max = false;
        break;
      }
    }
    if (is_max) kept.push_back(i);
  }
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) { return lambda3[a] > lambda3[b]; });

  std::vector<Keypoint3D> out;
  out.reserve(kept.size());
  for (auto i : kept) out.push_back({cloud.points[i], lambda3[i], counts[i]});
  return out;
}

/// Greedy suppression in descending saliency (stable on input order): a
/// keypoint survives iff no surviving keypoint lies within `radius`.
inline std::vector<Keypoint3D> nms_keypoints_3d(const std::vector<Keypoint3D>& kps, double radius) {
  std::vector<std::size_t> order(kps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kps[a].saliency > kps[b].saliency; });
  std::vector<Keypoint3D> kept;
  const double r2 = radius * radius;
  for (auto i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Keypoint3D& k) {
      return (k.position - kps[i].position).squaredNorm() <= r2;
    });
    if (!suppressed) kept.push_back(kps[i]);
  }
  return kept;
}

}  // namespace x2d3d
