#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "x2d3d/core/geometry.hpp"
#include "x2d3d/detect2d/image.hpp"

namespace x2d3d {

struct Keypoint2D {
  Pixel2 position = Pixel2::Zero();
  double scale = 1.0;     // Gaussian sigma in input-image pixels
  double response = 0.0;  // |DoG| at the refined extremum
};

struct DogParams {
  int n_octaves = 4;
  int scales_per_octave = 3;
  double contrast_threshold = 0.03;
  double sigma0 = 1.6;
  double assumed_blur = 0.5;
  // Principal-curvature ratio above which an extremum is treated as an edge
  // and dropped. Non-positive disables the test.
  double edge_ratio = 10.0;
  int border = 4;
};

namespace detail {

struct DogOctave {
  std::vector<GrayImage> dog;  // scales_per_octave + 2 layers
};

inline bool is_extremum(const DogOctave& oct, int s, int x, int y) {
  const double v = oct.dog[s].at(x, y);
  bool is_max = true, is_min = true;
  for (int ds = -1; ds <= 1; ++ds) {
    const GrayImage& layer = oct.dog[s + ds];
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (ds == 0 && dy == 0 && dx == 0) continue;
        const double w = layer.at(x + dx, y + dy);
        is_max = is_max && v > w;
        is_min = is_min && v < w;
        if (!is_max && !is_min) return false;
      }
    }
  }
  return true;
}

}  // namespace detail

/// Difference-of-Gaussians scale-space keypoints with quadratic sub-pixel /
/// sub-scale refinement. Keypoints come back in scan order (octave, layer, row, column).
inline std::vector<Keypoint2D> detect_dog_keypoints(const GrayImage& img, const DogParams& params = {}) {
  if (std::min(img.width, img.height) < 64) throw Error(ErrorCode::kImageTooSmall, "DoG needs at least 64x64 pixels");
  const int S = params.scales_per_octave;
  const double k = std::pow(2.0, 1.0 / S);

  std::vector<double> sigmas(S + 3);
  for (int s = 0; s < S + 3; ++s) sigmas[s] = params.sigma0 * std::pow(k, s);

  std::vector<Keypoint2D> out;
  GrayImage base = gaussian_blur(
      img, std::sqrt(std::max(0.01, params.sigma0 * params.sigma0 - params.assumed_blur * params.assumed_blur)));

  for (int o = 0; o < params.n_octaves; ++o) {
    if (std::min(base.width, base.height) < 2 * params.border + 3) break;
    std::vector<GrayImage> gauss{base};
    for (int s = 1; s < S + 3; ++s) {
      const double inc = std::sqrt(sigmas[s] * sigmas[s] - sigmas[s - 1] * sigmas[s - 1]);
      gauss.push_back(gaussian_blur(gauss.back(), inc));
    }
    detail::DogOctave oct;
    for (int s = 0; s < S + 2; ++s) {
      GrayImage d(base.width, base.height);
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = gauss[s + 1].data[i] - gauss[s].data[i];
      oct.dog.push_back(std::move(d));
    }

    const int w = base.width, h = base.height;
    const double prefilter = 0.5 * params.contrast_threshold;
    for (int s = 1; s <= S; ++s) {
      for (int y = params.border; y < h - params.border; ++y) {
        for (int x = params.border; x < w - params.border; ++x) {
          if (std::abs(oct.dog[s].at(x, y)) < prefilter) continue;
          if (!detail::is_extremum(oct, s, x, y)) continue;

          int xi = x, yi = y, si = s;
          Eigen::Vector3d offset = Eigen::Vector3d::Zero();
          Eigen::Vector3d grad = Eigen::Vector3d::Zero();
          Eigen::Matrix3d hess;
          bool converged = false;
          for (int iter = 0; iter < 5; ++iter) {
            const GrayImage& prev = oct.dog[si - 1];
            const GrayImage& cur = oct.dog[si];
            const GrayImage& next = oct.dog[si + 1];
            const double v = cur.at(xi, yi);
            grad = {0.5 * (cur.at(xi + 1, yi) - cur.at(xi - 1, yi)), 0.5 * (cur.at(xi, yi + 1) - cur.at(xi, yi - 1)),
                    0.5 * (next.at(xi, yi) - prev.at(xi, yi))};
            const double dxx = cur.at(xi + 1, yi) + cur.at(xi - 1, yi) - 2 * v;
            const double dyy = cur.at(xi, yi + 1) + cur.at(xi, yi - 1) - 2 * v;
            const double dss = next.at(xi, yi) + prev.at(xi, yi) - 2 * v;
            const double dxy = 0.25 * (cur.at(xi + 1, yi + 1) - cur.at(xi - 1, yi + 1) - cur.at(xi + 1, yi - 1) +
                                       cur.at(xi - 1, yi - 1));
            const double dxs = 0.25 * (next.at(xi + 1, yi) - next.at(xi - 1, yi) - prev.at(xi + 1, yi) +
                                       prev.at(xi - 1, yi));
            const double dys = 0.25 * (next.at(xi, yi + 1) - next.at(xi, yi - 1) - prev.at(xi, yi + 1) +
                                       prev.at(xi, yi - 1));
            hess << dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss;
            offset = -hess.colPivHouseholderQr().solve(grad);
            if (!offset.allFinite()) break;
            if (offset.cwiseAbs().maxCoeff() < 0.5) {
              converged = true;
              break;
            }
            xi += static_cast<int>(std::lround(offset(0)));
            yi += static_cast<int>(std::lround(offset(1)));
            si += static_cast<int>(std::lround(offset(2)));
            if (si < 1 || si > S || xi < params.border || xi >= w - params.border || yi < params.border ||
                yi >= h - params.border) {
              break;
            }
          }
          if (!converged) continue;

          const double contrast = oct.dog[si].at(xi, yi) + 0.5 * grad.dot(offset);
          if (std::abs(contrast) < params.contrast_threshold) continue;
          if (params.edge_ratio > 0.0) {
            const double tr = hess(0, 0) + hess(1, 1);
            const double det = hess(0, 0) * hess(1, 1) - hess(0, 1) * hess(0, 1);
            const double r = params.edge_ratio;
            if (det <= 0.0 || tr * tr * r >= (r + 1) * (r + 1) * det) continue;
          }

          const double octave_scale = std::ldexp(1.0, o);
          Keypoint2D kp;
          kp.position = Pixel2((xi + offset(0)) * octave_scale, (yi + offset(1)) * octave_scale);
          kp.scale = params.sigma0 * std::pow(2.0, o + (si + offset(2)) / S);
          kp.response = std::abs(contrast);
          if (kp.position.x() < 0 || kp.position.y() < 0 || kp.position.x() > img.width - 1 ||
              kp.position.y() > img.height - 1) {
            continue;
          }
          // Refinement can walk two seeds onto the same sample.
          const bool duplicate = std::any_of(out.begin(), out.end(), [&](const Keypoint2D& q) {
            return (q.position - kp.position).squaredNorm() < 1e-12 && std::abs(q.scale - kp.scale) < 1e-9;
          });
          if (!duplicate) out.push_back(kp);
        }
      }
    }
    base = downsample2(gauss[S]);
  }
  return out;
}

/// Greedy suppression by descending response (ties by input index).
inline std::vector<Keypoint2D> nms_keypoints_2d(const std::vector<Keypoint2D>& kps, double radius) {
  std::vector<std::size_t> order(kps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kps[a].response > kps[b].response; });
  std::vector<Keypoint2D> kept;
  const double r2 = radius * radius;
  for (auto i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Keypoint2D& k) {
      return (k.position - kps[i].position).squaredNorm() <= r2;
    });
    if (!suppressed) kept.push_back(kps[i]);
  }
  return kept;
}

}  // namespace x2d3d
