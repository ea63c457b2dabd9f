#pragma once

#include <span>
#include <string>
#include <vector>

#include "x2d3d/core/geometry.hpp"
#include "x2d3d/core/kdtree.hpp"

namespace x2d3d {

struct PointCloud {
  std::vector<Point3> points;
  std::string frame = "map";
  /// Optional per-point attribute; either empty or the same length as points.
  std::vector<double> intensity;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensity.empty(); }
};

inline std::vector<double> flatten(std::span<const Point3> pts) {
  std::vector<double> buf;
  buf.reserve(pts.size() * 3);
  for (const auto& p : pts) buf.insert(buf.end(), {p.x(), p.y(), p.z()});
  return buf;
}

/// Radius/kNN search over 3D points. Clouds below 256 points are scanned
/// exhaustively; larger clouds go through the k-d tree. Both paths return
/// the same, index-sorted results.
class PointIndex {
 public:
  static constexpr std::size_t kBruteForceBelow = 256;

  explicit PointIndex(std::span<const Point3> pts) : pts_(pts.begin(), pts.end()) {
    if (pts_.size() >= kBruteForceBelow) tree_ = KdTree(flatten(pts_), 3);
  }

  std::size_t size() const { return pts_.size(); }
  const Point3& operator[](std::size_t i) const { return pts_[i]; }

  std::vector<std::size_t> radius(const Point3& q, double r) const {
    if (tree_.size() > 0) return tree_.radius_search(std::span<const double>(q.data(), 3), r);
    std::vector<std::size_t> out;
    const double r2 = r * r;
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      if (squared_distance(q.data(), pts_[i].data(), 3) <= r2) out.push_back(i);
    }
    return out;
  }

 private:
  std::vector<Point3> pts_;
  KdTree tree_;
};

}  // namespace x2d3d
