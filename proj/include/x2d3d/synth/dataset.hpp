#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "x2d3d/detect2d/dog.hpp"
#include "x2d3d/detect2d/patch.hpp"
#include "x2d3d/detect3d/iss.hpp"
#include "x2d3d/detect3d/volume.hpp"
#include "x2d3d/embed/trainer.hpp"
#include "x2d3d/io/ply.hpp"
#include "x2d3d/synth/scene.hpp"

namespace x2d3d {

/// A disjoint run of frames with the map points around it, expressed in a
/// local frame whose origin is the first frame's camera center.
struct Submap {
  int id = 0;
  std::vector<int> frames;            // indices into the scene trajectory
  Point3 origin = Point3::Zero();     // world position of the local origin
  Eigen::Vector2d region_min, region_max;  // world xy bounds of the clipped map
  PointCloud cloud;                   // local coordinates

  /// World-to-camera pose of `frame` against local map coordinates.
  PoseSE3 local_pose(const PoseSE3& world_pose) const {
    return {world_pose.rotation(), world_pose.translation() + world_pose.rotation() * origin};
  }
};

struct SubmapParams {
  double length = 60.0;      // m of trajectory arc length
  double margin = 10.0;      // m
  double view_depth = 20.0;  // m along each optical axis included in the region
};

namespace detail {

inline PointCloud clip_local(const PointCloud& map, const Eigen::Vector2d& lo, const Eigen::Vector2d& hi, const Point3& origin) {
  PointCloud out;
  out.frame = "submap";
  for (std::size_t i = 0; i < map.size(); ++i) {
    const Point3& p = map.points[i];
    if (p.x() < lo.x() || p.y() < lo.y() || p.x() > hi.x() || p.y() > hi.y()) continue;
    out.points.push_back(p - origin);
    if (map.has_intensity()) out.intensity.push_back(map.intensity[i]);
  }
  return out;
}

}  // namespace detail

/// Partitions frames by cumulative trajectory arc length into `length`-sized
/// segments. The last segment absorbs a trajectory ending exactly on a
/// boundary, so 180 m at 60 m gives 3 submaps.
inline std::vector<Submap> split_submaps(const PointCloud& map, const std::vector<FramePose>& trajectory,
                                         const SubmapParams& params = {}) {
  if (trajectory.empty()) throw Error(ErrorCode::kEmptyInput, "trajectory is empty");
  if (!(params.length > 0.0)) throw Error(ErrorCode::kConfigInvalid, "submap length must be positive");
  std::vector<double> arc(trajectory.size(), 0.0);
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    arc[i] = arc[i - 1] + (trajectory[i].pose.center() - trajectory[i - 1].pose.center()).norm();
  }
  const int count = std::max(1, static_cast<int>(std::ceil(arc.back() / params.length - 1e-9)));
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const int g = std::min(count - 1, static_cast<int>(std::floor(arc[i] / params.length)));
    groups[static_cast<std::size_t>(g)].push_back(static_cast<int>(i));
  }

  std::vector<Submap> out;
  for (auto& frames : groups) {
    if (frames.empty()) continue;
    Submap s;
    s.id = static_cast<int>(out.size());
    s.frames = std::move(frames);
    s.origin = trajectory[static_cast<std::size_t>(s.frames.front())].pose.center();
    Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (int f : s.frames) {
      const PoseSE3& pose = trajectory[static_cast<std::size_t>(f)].pose;
      const Point3 c = pose.center();
      const Point3 ahead = c + params.view_depth * pose.rotation().row(2).transpose();
      for (const Point3& p : {c, ahead}) {
        lo = lo.cwiseMin(p.head<2>());
        hi = hi.cwiseMax(p.head<2>());
      }
    }
    s.region_min = lo - Eigen::Vector2d::Constant(params.margin);
    s.region_max = hi + Eigen::Vector2d::Constant(params.margin);
    s.cloud = detail::clip_local(map, s.region_min, s.region_max, s.origin);
    out.push_back(std::move(s));
  }
  return out;
}

struct LabelParams {
  double max_residual = 3.0;  // px
  int min_views = 3;
  double nms_3d = 4.0;        // m
  double nms_2d = 32.0;       // px
  double occlusion_tolerance = 0.05;  // relative depth slack against the rendered depth map
  PatchParams patch;
  VolumeParams volume;
  std::uint64_t seed = 1;
};

struct LabeledPair {
  Patch patch;
  LocalVolume volume;
  Keypoint2D keypoint2d;
  Keypoint3D keypoint3d;  // submap-local coordinates
  int support_views = 0;
  int frame = 0;          // trajectory index
  int submap = 0;
  int keypoint_id = 0;    // unique per 3D keypoint across the dataset
  double residual = 0.0;  // px, reprojection residual in this view
};

/// One view of a submap as seen by the labeler.
struct LabelView {
  int frame = 0;
  PoseSE3 pose;                      // world -> camera against submap-local points
  const GrayImage* image = nullptr;
  const std::vector<float>* depth = nullptr;  // optional occlusion test
  std::vector<Keypoint2D> keypoints;
};

/// A 3D keypoint is accepted when at least min_views views place a 2D
/// keypoint within max_residual of its projection. Accepted keypoints go
/// through 3D NMS by saliency, then each supporting view whose patch can be
/// cut yields one pair, and pairs of one frame go through 2D NMS by response.
/// `volume_cloud` is the (ground-free) cloud the volumes are cut from.
inline std::vector<LabeledPair> label_correspondences(const Submap& submap, const std::vector<LabelView>& views,
                                                      const std::vector<Keypoint3D>& keypoints3d,
                                                      const PointCloud& volume_cloud, const CameraIntrinsics& k,
                                                      const LabelParams& params, int first_keypoint_id = 0) {
  struct Support {
    std::size_t view;
    std::size_t kp;
    double residual;
  };
  std::vector<Keypoint3D> accepted;
  std::vector<std::vector<Support>> support_of;
  for (const Keypoint3D& kp3 : keypoints3d) {
    std::vector<Support> support;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Point3 pc = views[v].pose(kp3.position);
      const auto px = project_camera(pc, k);
      if (!px || !k.contains(*px)) continue;
      if (views[v].depth) {
        const auto x = static_cast<std::size_t>(std::lround(px->x())), y = static_cast<std::size_t>(std::lround(px->y()));
        const double z = (*views[v].depth)[y * static_cast<std::size_t>(k.width) + x];
        if (pc.z() > z * (1.0 + params.occlusion_tolerance)) continue;
      }
      const auto& kps = views[v].keypoints;
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < kps.size(); ++i) {
        const double d = (kps[i].position - *px).norm();
        if (d < best) best = d, best_i = i;
      }
      if (best < params.max_residual) support.push_back({v, best_i, best});
    }
    if (static_cast<int>(support.size()) < params.min_views) continue;
    accepted.push_back(kp3);
    support_of.push_back(std::move(support));
  }

  // 3D NMS over accepted keypoints; kept ones are matched back by position.
  const std::vector<Keypoint3D> kept = nms_keypoints_3d(accepted, params.nms_3d);
  const PointIndex index(volume_cloud.points);
  std::vector<LabeledPair> candidates;
  int next_id = first_keypoint_id;
  for (const Keypoint3D& kp3 : kept) {
    std::size_t j = 0;
    while (accepted[j].position != kp3.position) ++j;
    const VolumeResult vol =
        extract_volume(index, kp3, params.volume, derive_seed(params.seed, 0x1abe1, static_cast<std::uint64_t>(next_id)));
    if (!std::holds_alternative<LocalVolume>(vol)) continue;
    const int id = next_id++;
    const auto& support = support_of[j];
    for (const auto& s : support) {
      const LabelView& view = views[s.view];
      const Keypoint2D& kp2 = view.keypoints[s.kp];
      const PatchResult raw = extract_patch(*view.image, kp2, params.patch);
      if (!std::holds_alternative<GrayImage>(raw)) continue;
      LabeledPair pair;
      pair.patch = preprocess_patch(std::get<GrayImage>(raw), kp2, params.patch.output_side);
      pair.volume = std::get<LocalVolume>(vol);
      pair.keypoint2d = kp2;
      pair.keypoint3d = kp3;
      pair.support_views = static_cast<int>(support.size());
      pair.frame = view.frame;
      pair.submap = submap.id;
      pair.keypoint_id = id;
      pair.residual = s.residual;
      candidates.push_back(std::move(pair));
    }
  }

  // 2D NMS within each frame, strongest response first, ties by emission order.
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].keypoint2d.response > candidates[b].keypoint2d.response;
  });
  std::vector<char> keep(candidates.size(), 0);
  const double r2 = params.nms_2d * params.nms_2d;
  std::vector<std::size_t> kept_pairs;
  for (auto i : order) {
    const bool suppressed = std::any_of(kept_pairs.begin(), kept_pairs.end(), [&](std::size_t q) {
      return candidates[q].frame == candidates[i].frame &&
             (candidates[q].keypoint2d.position - candidates[i].keypoint2d.position).squaredNorm() <= r2;
    });
    if (suppressed) continue;
    kept_pairs.push_back(i);
    keep[i] = 1;
  }
  std::vector<LabeledPair> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (keep[i]) out.push_back(std::move(candidates[i]));
  }
  return out;
}

/// Anchor/positive from each pair, negative volume drawn uniformly from the
/// pairs of a different 3D keypoint. The triplets point into `pairs`.
inline std::vector<Triplet> make_triplets(const std::vector<LabeledPair>& pairs, std::uint64_t seed) {
  std::vector<int> ids;
  ids.reserve(pairs.size());
  for (const auto& p : pairs) ids.push_back(p.keypoint_id);
  require_two_keypoints(ids);
  Rng rng = make_rng(seed, 0x7219);
  const std::vector<std::size_t> neg = sample_negatives(ids, rng);
  std::vector<Triplet> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back({&pairs[i].patch, &pairs[i].volume, &pairs[neg[i]].volume});
  return out;
}

inline std::vector<TrainingPair> to_training_pairs(const std::vector<LabeledPair>& pairs) {
  std::vector<TrainingPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.patch, p.volume, p.keypoint_id});
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory
//
//   map.ply                 x y z intensity, world frame
//   trajectory.csv          frame, 3x4 [R|t] row-major (world -> camera)
//   submaps.csv             submap, split, first/last frame, origin, region
//   images/frame_%06d.pgm
//   pairs/index.csv         one line per labeled pair
//   pairs/pair_%06d.pgm     16-bit patch, value v stored as (v + 1) / 2
//   pairs/pair_%06d.ply     normalized local volume

enum class Split { kTrain, kTest };

inline const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

/// The final 10% of submaps (at least one) are test-only; with a single
/// submap there is nothing left to train on, so it stays in training.
inline Split split_of(int submap, int submap_count) {
  if (submap_count < 2) return Split::kTrain;
  const int test = std::max(1, static_cast<int>(std::ceil(0.1 * submap_count - 1e-9)));
  return submap >= submap_count - test ? Split::kTest : Split::kTrain;
}

namespace io {

inline std::string frame_name(int frame) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.pgm", frame);
  return buf;
}

inline std::string pair_stem(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%06zu", n);
  return buf;
}

inline std::string fmt(double v) {
  std::string s;
  detail::append_double(s, v);
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

inline double to_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error(ErrorCode::kFormat, "bad number: " + s);
  return v;
}

inline int to_int(const std::string& s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error(ErrorCode::kFormat, "bad integer: " + s);
  return v;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

inline void write_patch_pgm(const std::filesystem::path& path, const GrayImage& patch) {
  std::ofstream f = open_out(path);
  f << "P5\n" << patch.width << ' ' << patch.height << "\n65535\n";
  std::string bytes(patch.data.size() * 2, '\0');
  for (std::size_t i = 0; i < patch.data.size(); ++i) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp((patch.data[i] + 1.0) * 0.5, 0.0, 1.0) * 65535.0));
    bytes[2 * i] = static_cast<char>(q >> 8);
    bytes[2 * i + 1] = static_cast<char>(q & 0xff);
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline GrayImage read_patch_pgm(const std::filesystem::path& path) {
  std::ifstream f = open_in(path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  f.get();
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 65535) throw Error(ErrorCode::kFormat, "not a 16-bit patch: " + path.string());
  std::string bytes(static_cast<std::size_t>(w) * h * 2, '\0');
  if (!f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw Error(ErrorCode::kFormat, "truncated patch");
  GrayImage img(w, h);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const unsigned q = (static_cast<unsigned char>(bytes[2 * i]) << 8) | static_cast<unsigned char>(bytes[2 * i + 1]);
    img.data[i] = q / 65535.0 * 2.0 - 1.0;
  }
  return img;
}

inline void write_trajectory(const std::filesystem::path& path, const std::vector<FramePose>& trajectory) {
  std::ofstream f = open_out(path);
  f << "frame,r00,r01,r02,t0,r10,r11,r12,t1,r20,r21,r22,t2\n";
  for (const auto& fp : trajectory) {
    const auto m = fp.pose.matrix3x4();
    f << fp.id;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) f << ',' << fmt(m(r, c));
    f << '\n';
  }
}

inline std::vector<FramePose> read_trajectory(const std::filesystem::path& path) {
  std::ifstream f = open_in(path);
  std::string line;
  std::getline(f, line);
  std::vector<FramePose> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 13) throw Error(ErrorCode::kFormat, "trajectory row needs 13 columns");
    Eigen::Matrix<double, 3, 4> m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = to_double(cells[1 + 4 * r + c]);
    out.push_back({to_int(cells[0]), PoseSE3(m.leftCols<3>(), m.col(3))});
  }
  return out;
}

}  // namespace io

struct SubmapRecord {
  int id = 0;
  Split split = Split::kTrain;
  int first_frame = 0;
  int last_frame = 0;
  Point3 origin = Point3::Zero();
  Eigen::Vector2d region_min = Eigen::Vector2d::Zero(), region_max = Eigen::Vector2d::Zero();
};

inline SubmapRecord record_of(const Submap& s, int submap_count) {
  return {s.id, split_of(s.id, submap_count), s.frames.front(), s.frames.back(), s.origin, s.region_min, s.region_max};
}

/// Rebuilds a submap (frames, local cloud) from its record and the world map.
inline Submap restore_submap(const SubmapRecord& r, const PointCloud& map) {
  Submap s;
  s.id = r.id;
  for (int f = r.first_frame; f <= r.last_frame; ++f) s.frames.push_back(f);
  s.origin = r.origin;
  s.region_min = r.region_min;
  s.region_max = r.region_max;
  s.cloud = detail::clip_local(map, r.region_min, r.region_max, r.origin);
  return s;
}

namespace io {

inline void write_submaps(const std::filesystem::path& path, const std::vector<SubmapRecord>& records) {
  std::ofstream f = open_out(path);
  f << "submap,split,first_frame,last_frame,origin_x,origin_y,origin_z,min_x,min_y,max_x,max_y\n";
  for (const auto& r : records) {
    f << r.id << ',' << to_string(r.split) << ',' << r.first_frame << ',' << r.last_frame;
    for (double v : {r.origin.x(), r.origin.y(), r.origin.z(), r.region_min.x(), r.region_min.y(), r.region_max.x(), r.region_max.y()}) {
      f << ',' << fmt(v);
    }
    f << '\n';
  }
}

inline std::vector<SubmapRecord> read_submaps(const std::filesystem::path& path) {
  std::ifstream f = open_in(path);
  std::string line;
  std::getline(f, line);
  std::vector<SubmapRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 11) throw Error(ErrorCode::kFormat, "submap row needs 11 columns");
    SubmapRecord r;
    r.id = to_int(c[0]);
    if (c[1] != "train" && c[1] != "test") throw Error(ErrorCode::kFormat, "unknown split tag " + c[1]);
    r.split = c[1] == "test" ? Split::kTest : Split::kTrain;
    r.first_frame = to_int(c[2]);
    r.last_frame = to_int(c[3]);
    r.origin = {to_double(c[4]), to_double(c[5]), to_double(c[6])};
    r.region_min = {to_double(c[7]), to_double(c[8])};
    r.region_max = {to_double(c[9]), to_double(c[10])};
    out.push_back(r);
  }
  return out;
}

inline constexpr const char* kPairHeader =
    "pair,keypoint_id,submap,split,frame,u,v,scale,response,x,y,z,saliency,neighbor_count,support_views,residual,"
    "volume_count";

/// Writes pairs/index.csv plus one patch and one volume file per pair.
inline void write_pairs(const std::filesystem::path& dir, const std::vector<LabeledPair>& pairs, int submap_count) {
  std::filesystem::create_directories(dir);
  std::ofstream index = open_out(dir / "index.csv");
  index << kPairHeader << '\n';
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const LabeledPair& p = pairs[n];
    const std::string stem = pair_stem(n);
    write_patch_pgm(dir / (stem + ".pgm"), p.patch.pixels);
    PointCloud vol;
    vol.frame = "volume";
    vol.points = p.volume.points;
    write_ply(dir / (stem + ".ply"), vol);
    index << n << ',' << p.keypoint_id << ',' << p.submap << ',' << to_string(split_of(p.submap, submap_count)) << ','
          << p.frame;
    for (double v : {p.keypoint2d.position.x(), p.keypoint2d.position.y(), p.keypoint2d.scale, p.keypoint2d.response,
                     p.keypoint3d.position.x(), p.keypoint3d.position.y(), p.keypoint3d.position.z(), p.keypoint3d.saliency}) {
      index << ',' << fmt(v);
    }
    index << ',' << p.keypoint3d.neighbor_count << ',' << p.support_views << ',' << fmt(p.residual) << ','
          << p.volume.original_count << '\n';
  }
}

struct PairRecord {
  LabeledPair pair;
  Split split = Split::kTrain;
};

/// Reads pairs back; `only` restricts to one split.
inline std::vector<PairRecord> read_pairs(const std::filesystem::path& dir, std::optional<Split> only = std::nullopt) {
  std::ifstream index = open_in(dir / "index.csv");
  std::string line;
  std::getline(index, line);
  if (line != kPairHeader) throw Error(ErrorCode::kFormat, "unexpected pairs/index.csv header");
  std::vector<PairRecord> out;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 17) throw Error(ErrorCode::kFormat, "pair row needs 17 columns");
    PairRecord r;
    r.split = c[3] == "test" ? Split::kTest : Split::kTrain;
    if (only && r.split != *only) continue;
    LabeledPair& p = r.pair;
    const auto n = static_cast<std::size_t>(to_int(c[0]));
    p.keypoint_id = to_int(c[1]);
    p.submap = to_int(c[2]);
    p.frame = to_int(c[4]);
    p.keypoint2d.position = {to_double(c[5]), to_double(c[6])};
    p.keypoint2d.scale = to_double(c[7]);
    p.keypoint2d.response = to_double(c[8]);
    p.keypoint3d.position = {to_double(c[9]), to_double(c[10]), to_double(c[11])};
    p.keypoint3d.saliency = to_double(c[12]);
    p.keypoint3d.neighbor_count = to_int(c[13]);
    p.support_views = to_int(c[14]);
    p.residual = to_double(c[15]);
    const std::string stem = pair_stem(n);
    p.patch = preprocess_patch(read_patch_pgm(dir / (stem + ".pgm")), p.keypoint2d, kPatchSide);
    p.volume.points = read_ply(dir / (stem + ".ply")).points;
    p.volume.source_keypoint = p.keypoint3d;
    p.volume.original_count = to_int(c[16]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace io

}  // namespace x2d3d
