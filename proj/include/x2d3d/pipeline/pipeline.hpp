#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "x2d3d/pipeline/config.hpp"

namespace x2d3d {

// ---------------------------------------------------------------------------
// Map database

struct MapDbCounts {
  std::size_t map_points = 0;
  std::size_t ground_free_points = 0;
  std::size_t iss_keypoints = 0;
  std::size_t volumes_rejected = 0;
  std::size_t entries = 0;
};

struct MapDb {
  DescriptorDB db;
  MapDbCounts counts;
};

/// Ground removal that treats an all-ground cloud as empty instead of an error.
inline PointCloud without_ground(const PointCloud& cloud, const GroundParams& params) {
  if (cloud.size() < 50) return cloud;
  try {
    return remove_ground_plane(cloud, Point3::UnitZ(), params);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTooFewPointsRemaining) throw;
    PointCloud empty;
    empty.frame = cloud.frame;
    return empty;
  }
}

/// Ground removal, ISS, volume extraction and point-branch embedding of
/// every surviving keypoint, in detection order.
inline MapDb build_map_db(const PointCloud& map, const PointEmbedder& point, const PipelineConfig& cfg) {
  MapDbCounts counts;
  counts.map_points = map.size();
  const PointCloud cloud = without_ground(map, cfg.ground);
  counts.ground_free_points = cloud.size();
  const std::vector<Keypoint3D> kps = cloud.empty() ? std::vector<Keypoint3D>{} : detect_iss(cloud, cfg.iss);
  counts.iss_keypoints = kps.size();
  std::vector<DbEntry> entries;
  if (!kps.empty()) {
    const PointIndex index(cloud.points);
    for (std::size_t i = 0; i < kps.size(); ++i) {
      const VolumeResult vol = extract_volume(index, kps[i], cfg.label.volume, derive_seed(cfg.label.seed, 0xdb, i));
      if (!std::holds_alternative<LocalVolume>(vol)) {
        ++counts.volumes_rejected;
        continue;
      }
      entries.push_back({kps[i], point.embed(std::get<LocalVolume>(vol))});
    }
  }
  counts.entries = entries.size();
  if (entries.empty()) throw Error(ErrorCode::kEmptyDatabase, "no map keypoint survived ground removal, ISS and volume extraction");
  return {DescriptorDB::build(std::move(entries), cfg.match.search), counts};
}

// ---------------------------------------------------------------------------
// Localization

enum class LocalizeFailure { kNoKeypoints, kNoPatches, kTooFewHypotheses, kNotEnoughInliers, kAllSamplesDegenerate };

inline const char* to_string(LocalizeFailure f) {
  switch (f) {
    case LocalizeFailure::kNoKeypoints: return "NoKeypoints";
    case LocalizeFailure::kNoPatches: return "NoPatches";
    case LocalizeFailure::kTooFewHypotheses: return "TooFewHypotheses";
    case LocalizeFailure::kNotEnoughInliers: return "NotEnoughInliers";
    case LocalizeFailure::kAllSamplesDegenerate: return "AllSamplesDegenerate";
  }
  return "?";
}

inline std::optional<LocalizeFailure> localize_failure_from_string(const std::string& s) {
  for (auto f : {LocalizeFailure::kNoKeypoints, LocalizeFailure::kNoPatches, LocalizeFailure::kTooFewHypotheses,
                 LocalizeFailure::kNotEnoughInliers, LocalizeFailure::kAllSamplesDegenerate}) {
    if (s == to_string(f)) return f;
  }
  return std::nullopt;
}

struct LocalizationResult {
  int frame = 0;
  std::optional<PoseSE3> pose;
  std::optional<LocalizeFailure> failure;
  std::optional<double> translation_error;  // m, set by evaluate()
  std::optional<double> rotation_error;     // degrees, set by evaluate()
  std::size_t keypoints = 0;
  std::size_t patches = 0;
  std::size_t candidates = 0;
  std::size_t inliers = 0;
  double mean_reprojection_error = 0.0;
  int iterations = 0;
  double wall_ms = 0.0;
};

/// DoG keypoints, patches, image-branch descriptors, top-K retrieval, RANSAC.
/// Failures are returned, never thrown.
inline LocalizationResult localize(int frame, const GrayImage& query, const DescriptorDB& db, const ImageEmbedder& image,
                                   const CameraIntrinsics& k, const PipelineConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  LocalizationResult r;
  r.frame = frame;
  auto finish = [&](std::optional<LocalizeFailure> failure) {
    r.failure = failure;
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
  };

  std::vector<Keypoint2D> kps = detect_dog_keypoints(query, cfg.dog);
  if (cfg.query_nms > 0.0) kps = nms_keypoints_2d(kps, cfg.query_nms);
  r.keypoints = kps.size();
  if (kps.empty()) return finish(LocalizeFailure::kNoKeypoints);

  std::vector<MatchHypothesis> hyps;
  for (const Keypoint2D& kp : kps) {
    const PatchResult raw = extract_patch(query, kp, cfg.label.patch);
    if (!std::holds_alternative<GrayImage>(raw)) continue;
    ++r.patches;
    const Patch patch = preprocess_patch(std::get<GrayImage>(raw), kp, cfg.label.patch.output_side);
    MatchHypothesis h{kp, db.knn(image.embed(patch), cfg.match.k)};
    if (cfg.match.max_distance > 0.0) {
      std::erase_if(h.candidates, [&](const Candidate& c) { return c.distance > cfg.match.max_distance; });
    }
    r.candidates += h.candidates.size();
    hyps.push_back(std::move(h));
  }
  if (hyps.empty()) return finish(LocalizeFailure::kNoPatches);

  RansacConfig rc = cfg.ransac;
  rc.seed = derive_seed(cfg.ransac.seed, 0x10c, static_cast<std::uint64_t>(frame));
  const RansacResult res = ransac_pnp(hyps, k, rc);
  if (const auto* f = std::get_if<RansacFailure>(&res)) {
    r.inliers = f->best_inliers;
    r.iterations = f->iterations;
    switch (f->reason) {
      case RansacFailureReason::kTooFewHypotheses: return finish(LocalizeFailure::kTooFewHypotheses);
      case RansacFailureReason::kNotEnoughInliers: return finish(LocalizeFailure::kNotEnoughInliers);
      case RansacFailureReason::kAllSamplesDegenerate: return finish(LocalizeFailure::kAllSamplesDegenerate);
    }
  }
  const auto& est = std::get<PoseEstimate>(res);
  r.pose = est.pose;
  r.inliers = est.inliers.size();
  r.mean_reprojection_error = est.mean_reprojection_error;
  r.iterations = est.iterations;
  return finish(std::nullopt);
}

// ---------------------------------------------------------------------------
// Evaluation

struct CurvePoint {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
  double success_ratio = 0.0;
};

struct EvalReport {
  std::vector<LocalizationResult> results;  // frame order, errors filled in
  std::size_t frames = 0;
  std::size_t successes = 0;
  std::size_t tight_successes = 0;
  double success_ratio = 0.0;
  double tight_success_ratio = 0.0;
  std::optional<double> mean_translation_error;  // over successes only
  std::optional<double> mean_rotation_error;
  std::vector<CurvePoint> curve;
  std::vector<double> recall;  // recall@1..K, empty when not computed
  EvalConfig thresholds;
};

inline bool within(const LocalizationResult& r, double m, double deg) {
  return r.translation_error && *r.translation_error <= m && *r.rotation_error <= deg;
}

/// Errors against ground truth, success ratios at the main and tight
/// thresholds, and a success curve whose thresholds scale (m, deg) jointly
/// over three decades below and one above the main threshold.
inline EvalReport evaluate(std::vector<LocalizationResult> results, const std::map<int, PoseSE3>& truth, const EvalConfig& cfg) {
  EvalReport rep;
  rep.thresholds = cfg;
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.frame < b.frame; });
  double sum_t = 0.0, sum_r = 0.0;
  for (auto& r : results) {
    const auto gt = truth.find(r.frame);
    if (gt == truth.end()) throw Error(ErrorCode::kMissingGroundTruth, "no ground-truth pose for frame " + std::to_string(r.frame));
    r.translation_error.reset();
    r.rotation_error.reset();
    if (r.pose) {
      r.translation_error = translation_error_m(*r.pose, gt->second);
      r.rotation_error = rotation_error_deg(r.pose->rotation(), gt->second.rotation());
    }
    if (within(r, cfg.precision_m, cfg.precision_deg)) {
      ++rep.successes;
      sum_t += *r.translation_error;
      sum_r += *r.rotation_error;
    }
    if (within(r, cfg.tight_m, cfg.tight_deg)) ++rep.tight_successes;
  }
  rep.frames = results.size();
  if (rep.frames > 0) {
    rep.success_ratio = static_cast<double>(rep.successes) / static_cast<double>(rep.frames);
    rep.tight_success_ratio = static_cast<double>(rep.tight_successes) / static_cast<double>(rep.frames);
  }
  if (rep.successes > 0) {
    rep.mean_translation_error = sum_t / static_cast<double>(rep.successes);
    rep.mean_rotation_error = sum_r / static_cast<double>(rep.successes);
  }
  for (int i = 0; i < cfg.curve_points; ++i) {
    const double s = std::pow(10.0, -3.0 + 4.0 * i / (cfg.curve_points - 1));
    CurvePoint p{s * cfg.precision_m, s * cfg.precision_deg, 0.0};
    std::size_t n = 0;
    for (const auto& r : results) n += within(r, p.translation_m, p.rotation_deg);
    if (rep.frames > 0) p.success_ratio = static_cast<double>(n) / static_cast<double>(rep.frames);
    rep.curve.push_back(p);
  }
  rep.results = std::move(results);
  return rep;
}

// ---------------------------------------------------------------------------
// Retrieval recall

struct RecallQuery {
  const Patch* patch = nullptr;
  int keypoint_id = 0;
};

namespace detail {

// Cumulative hit counts: element k-1 counts queries whose true id is in the top k.
inline std::vector<std::size_t> recall_hits(const DescriptorDB& db, const std::vector<int>& entry_ids,
                                            const std::vector<RecallQuery>& queries, const ImageEmbedder& image, int k_max) {
  if (entry_ids.size() != db.size()) throw Error(ErrorCode::kShapeMismatch, "one keypoint id per database entry");
  std::vector<std::size_t> hits(static_cast<std::size_t>(k_max), 0);
  for (const auto& q : queries) {
    const auto cands = db.knn(image.embed(*q.patch), k_max);
    for (std::size_t rank = 0; rank < cands.size(); ++rank) {
      if (entry_ids[cands[rank].entry] == q.keypoint_id) {
        for (std::size_t k = rank; k < hits.size(); ++k) ++hits[k];
        break;
      }
    }
  }
  return hits;
}

inline std::vector<double> to_ratios(const std::vector<std::size_t>& hits, std::size_t total) {
  std::vector<double> out;
  for (auto h : hits) out.push_back(static_cast<double>(h) / static_cast<double>(total));
  return out;
}

}  // namespace detail

/// recall@k for k = 1..k_max: fraction of queries whose true keypoint id is
/// among the top-k entries. `entry_ids[i]` is the keypoint id of entry i.
inline std::vector<double> recall_at_k(const DescriptorDB& db, const std::vector<int>& entry_ids,
                                       const std::vector<RecallQuery>& queries, const ImageEmbedder& image, int k_max) {
  if (queries.empty()) throw Error(ErrorCode::kEmptyTestSet, "recall needs at least one test pair");
  return detail::to_ratios(detail::recall_hits(db, entry_ids, queries, image, k_max), queries.size());
}

/// Recall over labeled pairs, each retrieved against the database of the
/// unique keypoints of its own submap. Queries are pooled across submaps.
inline std::vector<double> recall_at_k(const std::vector<LabeledPair>& pairs, const ImageEmbedder& image,
                                       const PointEmbedder& point, int k_max, SearchMode mode = SearchMode::kAuto) {
  if (pairs.empty()) throw Error(ErrorCode::kEmptyTestSet, "recall needs at least one test pair");
  std::map<int, std::vector<const LabeledPair*>> by_submap;
  for (const auto& p : pairs) by_submap[p.submap].push_back(&p);
  std::vector<std::size_t> hits(static_cast<std::size_t>(k_max), 0);
  for (const auto& [submap, members] : by_submap) {
    std::vector<DbEntry> entries;
    std::vector<int> ids;
    std::vector<RecallQuery> queries;
    for (const LabeledPair* p : members) {
      queries.push_back({&p->patch, p->keypoint_id});
      if (std::find(ids.begin(), ids.end(), p->keypoint_id) != ids.end()) continue;
      ids.push_back(p->keypoint_id);
      entries.push_back({p->keypoint3d, point.embed(p->volume)});
    }
    const DescriptorDB db = DescriptorDB::build(std::move(entries), mode);
    const auto h = detail::recall_hits(db, ids, queries, image, k_max);
    for (std::size_t k = 0; k < hits.size(); ++k) hits[k] += h[k];
  }
  return detail::to_ratios(hits, pairs.size());
}

}  // namespace x2d3d
