#pragma once

#include <cmath>
#include <numeric>
#include <variant>

#include "x2d3d/detect2d/dog.hpp"

namespace x2d3d {

inline constexpr int kPatchSide = 128;

/// Fixed-size, mean-subtracted image window around a 2D keypoint.
struct Patch {
  GrayImage pixels;
  Keypoint2D source_keypoint;
};

struct PatchParams {
  int base_size = 256;          // window side at scale <= 1
  double scale_threshold = 4.0; // larger scales are discarded
  int output_side = kPatchSide;
};

enum class PatchRejectReason { kScaleTooLarge, kOutOfBounds };

struct PatchRejected {
  PatchRejectReason reason;
};

using PatchResult = std::variant<GrayImage, PatchRejected>;

/// Side of the extraction window: inversely proportional to keypoint scale,
/// anchored at `base_size` for scales up to 1.
inline int window_side(double scale, int base_size) {
  return static_cast<int>(std::lround(base_size / std::max(scale, 1.0)));
}

inline PatchResult extract_patch(const GrayImage& img, const Keypoint2D& kp, const PatchParams& params = {}) {
  if (params.base_size % 2 != 0) throw Error(ErrorCode::kConfigInvalid, "patch base size must be even");
  if (kp.scale > params.scale_threshold) return PatchRejected{PatchRejectReason::kScaleTooLarge};
  const int side = window_side(kp.scale, params.base_size);
  const double half = 0.5 * (side - 1);
  const double x0 = kp.position.x() - half, y0 = kp.position.y() - half;
  if (x0 < 0.0 || y0 < 0.0 || x0 + side - 1 > img.width - 1 || y0 + side - 1 > img.height - 1) {
    return PatchRejected{PatchRejectReason::kOutOfBounds};
  }
  GrayImage raw(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) raw.at(x, y) = img.bilinear(x0 + x, y0 + y);
  return raw;
}

inline Patch preprocess_patch(const GrayImage& raw, const Keypoint2D& source = {}, int output_side = kPatchSide) {
  if (raw.width != raw.height || raw.width < 8) throw Error(ErrorCode::kShapeMismatch, "raw patch must be square, side >= 8");
  Patch p{resize_bilinear(raw, output_side, output_side), source};
  const double mean = std::accumulate(p.pixels.data.begin(), p.pixels.data.end(), 0.0) /
                      static_cast<double>(p.pixels.data.size());
  for (auto& v : p.pixels.data) v -= mean;
  return p;
}

}  // namespace x2d3d
