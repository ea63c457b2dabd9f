#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "x2d3d/core/error.hpp"
#include "x2d3d/core/geometry.hpp"
#include "x2d3d/core/random.hpp"
#include "x2d3d/detect2d/image.hpp"
#include "x2d3d/detect3d/point_cloud.hpp"

namespace x2d3d {

// World frame: z up, ground plane z = 0. The camera drives along +x and
// looks sideways (+y) at a row of structures.
struct SceneConfig {
  std::uint64_t seed = 1;
  int n_structures = 50;
  double extent = 240.0;        // m, map length along the trajectory
  double points_per_m2 = 400.0;         // structure surfaces
  double ground_points_per_m2 = 50.0;
  double texture_cell = 0.2;            // m
  int n_frames = 200;
  double frame_spacing = 1.2;   // m
  double camera_height = 1.5;   // m
  double camera_pitch_deg = 8.0;
  double pose_jitter_deg = 2.0;
  CameraIntrinsics intrinsics{400.0, 400.0, 256.0, 192.0, 512, 384};
  double submap_length = 60.0;  // m
  double texture_noise = 0.2;
  double lateral_min = 6.0;     // m, structure centers from the trajectory
  double lateral_max = 14.0;
  double sky = 0.95;

  void validate() const {
    if (!(extent > 0.0) || !(points_per_m2 > 0.0) || !(ground_points_per_m2 > 0.0) || !(submap_length > 0.0) ||
        !(texture_cell > 0.0)) {
      throw Error(ErrorCode::kConfigInvalid, "scene extent, density and submap length must be positive");
    }
    if (n_structures < 0 || n_frames < 1 || !(frame_spacing > 0.0)) {
      throw Error(ErrorCode::kConfigInvalid, "bad structure count, frame count or spacing");
    }
    if (!intrinsics.valid()) throw Error(ErrorCode::kConfigInvalid, "invalid camera intrinsics");
    if (!(texture_noise >= 0.0 && texture_noise <= 1.0)) throw Error(ErrorCode::kConfigInvalid, "texture_noise outside [0, 1]");
    if (!(lateral_max > lateral_min) || !(lateral_min > 0.0)) throw Error(ErrorCode::kConfigInvalid, "bad lateral range");
  }
};

enum class StructureKind { kBox, kCylinder, kSphere };

struct Structure {
  StructureKind kind = StructureKind::kBox;
  int id = 0;            // 0 is reserved for the ground
  Point3 base;           // footprint center on the ground (sphere: below its center)
  Point3 size;           // box: sx, sy, sz; cylinder: r, r, h; sphere: r, r, r
  double yaw = 0.0;      // rad, about z
  double sink = 0.0;     // sphere: depth of the center below base.z + r

  double footprint_radius() const {
    return kind == StructureKind::kBox ? 0.5 * std::hypot(size.x(), size.y()) : size.x();
  }
};

struct FramePose {
  int id = 0;
  PoseSE3 pose;  // world -> camera
};

struct Scene {
  PointCloud map;
  std::vector<Point3> normals;     // per map point, outward
  std::vector<float> spacing;      // per map point, sampling distance in m
  std::vector<int> structure_of;  // per map point; 0 = ground
  std::vector<Structure> structures;
  std::vector<FramePose> trajectory;
  std::vector<GrayImage> images;
  std::vector<std::vector<float>> depths;  // per frame, row-major, +inf for sky
};

/// Fixed light direction of the shading model.
inline Point3 light_direction() { return Point3(0.3, -0.5, 0.8).normalized(); }

/// Smooth value noise in [-1, 1] on a `cell`-sized lattice, one field per structure.
inline double texture_field(std::uint64_t seed, int structure, const Point3& p, double cell) {
  const Point3 q = p / cell;
  const Eigen::Vector3d fl(std::floor(q.x()), std::floor(q.y()), std::floor(q.z()));
  const Eigen::Vector3d f = q - fl;
  auto lattice = [&](int dx, int dy, int dz) {
    std::uint64_t h = derive_seed(seed, 0x7e47 + static_cast<std::uint64_t>(structure));
    for (double c : {fl.x() + dx, fl.y() + dy, fl.z() + dz}) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(c)));
    return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  };
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double sx = smooth(f.x()), sy = smooth(f.y()), sz = smooth(f.z());
  double v = 0.0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const double w = (dx ? sx : 1.0 - sx) * (dy ? sy : 1.0 - sy) * (dz ? sz : 1.0 - sz);
        v += w * lattice(dx, dy, dz);
      }
  return v;
}

inline double shade(const SceneConfig& cfg, int structure, const Point3& p, const Point3& normal) {
  const double v = 0.5 + 0.3 * normal.dot(light_direction()) + cfg.texture_noise * texture_field(cfg.seed, structure, p, cfg.texture_cell);
  return std::clamp(v, 0.0, 1.0);
}

namespace detail {

struct SurfaceSampler {
  const SceneConfig& cfg;
  Scene& scene;
  Rng& rng;

  int count_for(double area, double density) const { return static_cast<int>(std::lround(area * density)); }
  int count_for(double area) const { return count_for(area, cfg.points_per_m2); }

  void emit(int structure, const Point3& p, const Point3& n) {
    if (p.z() < 0.0) return;
    const double density = structure == 0 ? cfg.ground_points_per_m2 : cfg.points_per_m2;
    scene.spacing.push_back(static_cast<float>(1.0 / std::sqrt(density)));
    scene.map.points.push_back(p);
    scene.map.intensity.push_back(shade(cfg, structure, p, n));
    scene.normals.push_back(n);
    scene.structure_of.push_back(structure);
  }

  // Rectangle centered at c spanned by unit axes a, b with half sizes ha, hb.
  void rect(int id, const Point3& c, const Point3& a, const Point3& b, double ha, double hb) {
    const Point3 n = a.cross(b).normalized();
    const int m = count_for(4.0 * ha * hb);
    for (int i = 0; i < m; ++i) emit(id, c + uniform(rng, -ha, ha) * a + uniform(rng, -hb, hb) * b, n);
  }

  void box(const Structure& s) {
    const Matrix3 r = rot_z(s.yaw);
    const Point3 ex = r.col(0), ey = r.col(1), ez = Point3::UnitZ();
    const double hx = 0.5 * s.size.x(), hy = 0.5 * s.size.y(), hz = 0.5 * s.size.z();
    const Point3 mid = s.base + hz * ez;
    // Outward normals: a x b points away from the box.
    rect(s.id, mid + hx * ex, ey, ez, hy, hz);
    rect(s.id, mid - hx * ex, ez, ey, hz, hy);
    rect(s.id, mid + hy * ey, ez, ex, hz, hx);
    rect(s.id, mid - hy * ey, ex, ez, hx, hz);
    rect(s.id, s.base + s.size.z() * ez, ex, ey, hx, hy);
  }

  void cylinder(const Structure& s) {
    const double r = s.size.x(), h = s.size.z();
    const int side = count_for(2.0 * std::numbers::pi * r * h);
    for (int i = 0; i < side; ++i) {
      const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const Point3 n(std::cos(a), std::sin(a), 0.0);
      emit(s.id, s.base + r * n + uniform(rng, 0.0, h) * Point3::UnitZ(), n);
    }
    const int cap = count_for(std::numbers::pi * r * r);
    for (int i = 0; i < cap; ++i) {
      const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi), rr = r * std::sqrt(uniform(rng, 0.0, 1.0));
      emit(s.id, s.base + Point3(rr * std::cos(a), rr * std::sin(a), h), Point3::UnitZ());
    }
  }

  void sphere(const Structure& s) {
    const double r = s.size.x();
    const Point3 c = s.base + (r - s.sink) * Point3::UnitZ();
    const int m = count_for(4.0 * std::numbers::pi * r * r);
    for (int i = 0; i < m; ++i) {
      const double z = uniform(rng, -1.0, 1.0), a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double rho = std::sqrt(1.0 - z * z);
      const Point3 n(rho * std::cos(a), rho * std::sin(a), z);
      emit(s.id, c + r * n, n);
    }
  }
};

inline std::vector<Structure> place_structures(const SceneConfig& cfg) {
  Rng rng = make_rng(cfg.seed, 0x5717);
  std::vector<Structure> out;
  constexpr int kAttempts = 200;
  for (int i = 0; i < cfg.n_structures; ++i) {
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      Structure s;
      s.id = i + 1;
      const double pick = uniform(rng, 0.0, 1.0);
      if (pick < 0.5) {
        s.kind = StructureKind::kBox;
        s.size = {uniform(rng, 1.0, 4.0), uniform(rng, 1.0, 4.0), uniform(rng, 1.0, 5.0)};
      } else if (pick < 0.8) {
        s.kind = StructureKind::kCylinder;
        const double r = uniform(rng, 0.3, 1.5);
        s.size = {r, r, uniform(rng, 1.0, 5.0)};
      } else {
        s.kind = StructureKind::kSphere;
        const double r = uniform(rng, 0.5, 2.0);
        s.size = {r, r, r};
        s.sink = uniform(rng, 0.0, 0.5) * r;
      }
      s.yaw = uniform(rng, 0.0, std::numbers::pi);
      s.base = {uniform(rng, 0.0, cfg.extent), uniform(rng, cfg.lateral_min, cfg.lateral_max), 0.0};
      if (s.base.y() - s.footprint_radius() < 2.0) continue;  // keep the road clear
      const bool clear = std::none_of(out.begin(), out.end(), [&](const Structure& o) {
        return (o.base - s.base).head<2>().norm() < o.footprint_radius() + s.footprint_radius() + 0.5;
      });
      if (!clear) continue;
      out.push_back(s);
      break;
    }
  }
  return out;
}

}  // namespace detail

/// World-to-camera pose of a camera at `center` looking along +y with the
/// given pitch (up positive) and yaw (to the left positive) offsets.
inline PoseSE3 side_looking_pose(const Point3& center, double pitch_rad, double yaw_rad) {
  Matrix3 cam_to_world;
  cam_to_world.col(0) = Point3::UnitX();   // image right
  cam_to_world.col(1) = -Point3::UnitZ();  // image down
  cam_to_world.col(2) = Point3::UnitY();   // optical axis
  const Matrix3 r = rot_z(yaw_rad) * cam_to_world * rot_x(pitch_rad);
  const Matrix3 rt = r.transpose();
  return {rt, -rt * center};
}

struct RenderParams {
  double point_spacing = 0.1;     // m, mean surface sampling distance
  double footprint_scale = 1.5;   // footprint radius in units of the projected spacing
  double max_footprint = 12.0;    // px
  double depth_tolerance = 0.05;  // relative
  double sky = 0.95;
};

struct RenderedFrame {
  GrayImage image;
  std::vector<double> depth;  // +inf where nothing was rendered
};

/// Z-buffered point splatting. Pass 1 writes depths over a disk footprint
/// whose radius follows the projected sampling distance, so sampled surfaces
/// close up. Pass 2 blends every point that survives the depth test with
/// Gaussian weights over the same footprint. Points whose normal faces away
/// from the camera are culled when normals are given; per-point sampling
/// distances override params.point_spacing when given.
inline RenderedFrame render_frame(const PointCloud& cloud, std::span<const Point3> normals, std::span<const float> spacing,
                                  const PoseSE3& pose, const CameraIntrinsics& k, const RenderParams& params = {}) {
  if (!normals.empty() && normals.size() != cloud.size()) throw Error(ErrorCode::kShapeMismatch, "one normal per point");
  if (!spacing.empty() && spacing.size() != cloud.size()) throw Error(ErrorCode::kShapeMismatch, "one spacing per point");
  const int w = k.width, h = k.height;
  const double inf = std::numeric_limits<double>::infinity();
  RenderedFrame out{GrayImage(w, h), std::vector<double>(static_cast<std::size_t>(w) * h, inf)};
  auto& depth = out.depth;
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };
  const Point3 center = pose.center();

  struct Splat {
    double u, v, z, r;
    std::size_t point;
    int x0, x1, y0, y1;
  };
  std::vector<Splat> splats;
  splats.reserve(cloud.size() / 4);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3 pc = pose(cloud.points[i]);
    if (pc.z() < 0.1) continue;
    if (!normals.empty() && normals[i].dot(cloud.points[i] - center) > 0.0) continue;
    const double u = k.fx * pc.x() / pc.z() + k.cx, v = k.fy * pc.y() / pc.z() + k.cy;
    const double gap = spacing.empty() ? params.point_spacing : static_cast<double>(spacing[i]);
    const double r = std::clamp(params.footprint_scale * k.fx * gap / pc.z(), 0.75, params.max_footprint);
    Splat s{u, v, pc.z(), r, i, std::max(0, static_cast<int>(std::ceil(u - r))), std::min(w - 1, static_cast<int>(std::floor(u + r))),
            std::max(0, static_cast<int>(std::ceil(v - r))), std::min(h - 1, static_cast<int>(std::floor(v + r)))};
    if (s.x0 > s.x1 || s.y0 > s.y1) continue;
    splats.push_back(s);
  }

  auto covers = [](const Splat& s, int x, int y) { return (x - s.u) * (x - s.u) + (y - s.v) * (y - s.v) <= s.r * s.r; };
  for (const auto& s : splats)
    for (int y = s.y0; y <= s.y1; ++y)
      for (int x = s.x0; x <= s.x1; ++x)
        if (covers(s, x, y)) depth[idx(x, y)] = std::min(depth[idx(x, y)], s.z);

  std::vector<double> acc(depth.size(), 0.0), wsum(depth.size(), 0.0);
  for (const auto& s : splats) {
    const double val = cloud.intensity.empty() ? 0.5 : cloud.intensity[s.point];
    const double inv_var = 2.0 / (s.r * s.r);  // sigma = r / 2
    for (int y = s.y0; y <= s.y1; ++y)
      for (int x = s.x0; x <= s.x1; ++x) {
        const std::size_t i = idx(x, y);
        if (!covers(s, x, y) || s.z > depth[i] * (1.0 + params.depth_tolerance)) continue;
        const double d2 = (x - s.u) * (x - s.u) + (y - s.v) * (y - s.v);
        const double wt = std::exp(-0.5 * d2 * inv_var) + 1e-12;
        acc[i] += wt * val;
        wsum[i] += wt;
      }
  }
  for (std::size_t i = 0; i < depth.size(); ++i) out.image.data[i] = wsum[i] > 0.0 ? acc[i] / wsum[i] : params.sky;
  return out;
}

inline RenderedFrame render_frame(const PointCloud& cloud, const PoseSE3& pose, const CameraIntrinsics& k,
                                  const RenderParams& params = {}) {
  return render_frame(cloud, {}, {}, pose, k, params);
}

inline RenderParams render_params_for(const SceneConfig& cfg) {
  RenderParams p;
  p.point_spacing = 1.0 / std::sqrt(cfg.points_per_m2);
  p.sky = cfg.sky;
  return p;
}

inline std::vector<FramePose> make_trajectory(const SceneConfig& cfg) {
  Rng rng = make_rng(cfg.seed, 0x7a1);
  std::vector<FramePose> out;
  out.reserve(static_cast<std::size_t>(cfg.n_frames));
  for (int i = 0; i < cfg.n_frames; ++i) {
    const double pitch = deg2rad(cfg.camera_pitch_deg + uniform(rng, -cfg.pose_jitter_deg, cfg.pose_jitter_deg));
    const double yaw = deg2rad(uniform(rng, -cfg.pose_jitter_deg, cfg.pose_jitter_deg));
    const Point3 center(i * cfg.frame_spacing, 0.0, cfg.camera_height);
    out.push_back({i, side_looking_pose(center, pitch, yaw)});
  }
  return out;
}

/// Seeded scene: structures on a ground plane, a straight side-looking
/// trajectory, and one rendered image per frame.
inline Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  Scene scene;
  scene.structures = detail::place_structures(cfg);
  Rng rng = make_rng(cfg.seed, 0x5a3);
  detail::SurfaceSampler sampler{cfg, scene, rng};

  const double y_lo = -2.0, y_hi = cfg.lateral_max + 6.0;
  const double x_lo = -10.0, x_hi = std::max(cfg.extent, (cfg.n_frames - 1) * cfg.frame_spacing) + 10.0;
  const int ground = sampler.count_for((x_hi - x_lo) * (y_hi - y_lo), cfg.ground_points_per_m2);
  for (int i = 0; i < ground; ++i) {
    sampler.emit(0, {uniform(rng, x_lo, x_hi), uniform(rng, y_lo, y_hi), 0.0}, Point3::UnitZ());
  }
  for (const auto& s : scene.structures) {
    switch (s.kind) {
      case StructureKind::kBox: sampler.box(s); break;
      case StructureKind::kCylinder: sampler.cylinder(s); break;
      case StructureKind::kSphere: sampler.sphere(s); break;
    }
  }

  scene.trajectory = make_trajectory(cfg);
  const RenderParams rp = render_params_for(cfg);
  scene.images.reserve(scene.trajectory.size());
  scene.depths.reserve(scene.trajectory.size());
  for (const auto& f : scene.trajectory) {
    RenderedFrame r = render_frame(scene.map, scene.normals, scene.spacing, f.pose, cfg.intrinsics, rp);
    scene.images.push_back(std::move(r.image));
    scene.depths.emplace_back(r.depth.begin(), r.depth.end());
  }
  return scene;
}

}  // namespace x2d3d
