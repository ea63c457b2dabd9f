#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <variant>
#include <vector>

#include "x2d3d/core/random.hpp"
#include "x2d3d/detect3d/iss.hpp"

namespace x2d3d {

/// Neighborhood of a 3D keypoint: translated so the keypoint sits at the
/// origin, divided by the gathering radius, padded to a fixed count.
struct LocalVolume {
  std::vector<Point3> points;
  Keypoint3D source_keypoint;
  int original_count = 0;
};

struct VolumeParams {
  double radius = 1.0;
  int min_points = 100;
  int pad_count = 1024;
};

struct VolumeRejected {
  int neighbor_count = 0;
};

using VolumeResult = std::variant<LocalVolume, VolumeRejected>;

inline VolumeResult extract_volume(const PointIndex& index, const Keypoint3D& kp, const VolumeParams& params,
                                   std::uint64_t seed) {
  if (!(params.radius > 0.0)) throw Error(ErrorCode::kConfigInvalid, "volume radius must be positive");
  std::vector<std::size_t> nbrs = index.radius(kp.position, params.radius);
  const int count = static_cast<int>(nbrs.size());
  if (count < params.min_points || count == 0) return VolumeRejected{count};

  Rng rng = make_rng(seed, 0x701);
  const auto pad = static_cast<std::size_t>(params.pad_count);
  std::vector<std::size_t> chosen;
  if (nbrs.size() > pad) {
    // Partial Fisher-Yates: uniform subset without replacement.
    for (std::size_t i = 0; i < pad; ++i) std::swap(nbrs[i], nbrs[i + uniform_index(rng, nbrs.size() - i)]);
    chosen.assign(nbrs.begin(), nbrs.begin() + static_cast<std::ptrdiff_t>(pad));
  } else {
    chosen = nbrs;
    while (chosen.size() < pad) chosen.push_back(nbrs[uniform_index(rng, nbrs.size())]);
  }

  LocalVolume vol;
  vol.source_keypoint = kp;
  vol.original_count = count;
  vol.points.reserve(pad);
  const double inv_r = 1.0 / params.radius;
  for (auto i : chosen) vol.points.push_back((index[i] - kp.position) * inv_r);
  return vol;
}

inline VolumeResult extract_volume(const PointCloud& cloud, const Keypoint3D& kp, const VolumeParams& params,
                                   std::uint64_t seed) {
  return extract_volume(PointIndex(cloud.points), kp, params, seed);
}

}  // namespace x2d3d
