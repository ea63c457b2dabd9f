#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <variant>
#include <vector>

#include "x2d3d/core/random.hpp"
#include "x2d3d/match/descriptor_db.hpp"
#include "x2d3d/pose/epnp.hpp"

namespace x2d3d {

struct RansacConfig {
  double reprojection_threshold = 5.0;  // px
  double confidence = 0.99;
  int max_iterations = 5000;
  int min_inliers = 12;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(reprojection_threshold > 0.0) || !(confidence > 0.0 && confidence < 1.0) || max_iterations < 1 || min_inliers < 4) {
      throw Error(ErrorCode::kConfigInvalid, "invalid RANSAC configuration");
    }
  }
};

struct PoseEstimate {
  PoseSE3 pose;
  std::vector<std::size_t> inliers;         // hypothesis indices
  std::vector<std::size_t> inlier_candidate;  // chosen candidate per inlier
  double mean_reprojection_error = 0.0;     // px, over inliers
  int iterations = 0;
};

enum class RansacFailureReason { kTooFewHypotheses, kNotEnoughInliers, kAllSamplesDegenerate };

struct RansacFailure {
  RansacFailureReason reason;
  std::size_t best_inliers = 0;
  int iterations = 0;
};

using RansacResult = std::variant<PoseEstimate, RansacFailure>;

inline const char* to_string(RansacFailureReason r) {
  switch (r) {
    case RansacFailureReason::kTooFewHypotheses: return "TooFewHypotheses";
    case RansacFailureReason::kNotEnoughInliers: return "NotEnoughInliers";
    case RansacFailureReason::kAllSamplesDegenerate: return "AllSamplesDegenerate";
  }
  return "?";
}

/// RANSAC iteration bound for inlier ratio w with k_eff candidates per
/// hypothesis: a sample succeeds with probability (w / k_eff)^4.
inline int ransac_iteration_bound(double w, double k_eff, double confidence, int max_iterations) {
  const double p = std::pow(w / std::max(k_eff, 1.0), 4.0);
  if (p >= 1.0) return 1;
  if (p <= 0.0) return max_iterations;
  const double n = std::log(1.0 - confidence) / std::log1p(-p);
  if (!std::isfinite(n) || n >= max_iterations) return max_iterations;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

namespace detail {

struct InlierSet {
  std::vector<std::size_t> hyps;
  std::vector<std::size_t> cand;
  double error_sum = 0.0;

  double mean_error() const { return hyps.empty() ? 0.0 : error_sum / static_cast<double>(hyps.size()); }
};

inline InlierSet count_inliers(const std::vector<MatchHypothesis>& hyps, const PoseSE3& pose, const CameraIntrinsics& k,
                               double threshold) {
  InlierSet s;
  for (std::size_t h = 0; h < hyps.size(); ++h) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    const auto& cands = hyps[h].candidates;
    for (std::size_t c = 0; c < cands.size(); ++c) {
      const double e = reprojection_error(pose, {hyps[h].query.position, cands[c].keypoint.position}, k);
      if (e < best) best = e, best_c = c;
    }
    if (best < threshold) {
      s.hyps.push_back(h);
      s.cand.push_back(best_c);
      s.error_sum += best;
    }
  }
  return s;
}

inline bool better(const InlierSet& a, const InlierSet& b) {
  if (a.hyps.size() != b.hyps.size()) return a.hyps.size() > b.hyps.size();
  return a.mean_error() < b.mean_error();
}

}  // namespace detail

/// Pose from multi-candidate 2D-3D hypotheses. Each iteration draws its
/// sample from an RNG keyed by (seed, iteration), so the result does not
/// depend on how iterations are scheduled.
inline RansacResult ransac_pnp(const std::vector<MatchHypothesis>& hyps, const CameraIntrinsics& k, const RansacConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> usable;
  double k_sum = 0.0;
  for (std::size_t h = 0; h < hyps.size(); ++h) {
    if (hyps[h].candidates.empty()) continue;
    usable.push_back(h);
    k_sum += static_cast<double>(hyps[h].candidates.size());
  }
  if (usable.size() < 4) return RansacFailure{RansacFailureReason::kTooFewHypotheses, 0, 0};
  const double k_eff = k_sum / static_cast<double>(usable.size());
  const double n_hyps = static_cast<double>(hyps.size());

  std::optional<PoseSE3> best_pose;
  detail::InlierSet best;
  int bound = cfg.max_iterations;
  int it = 0;
  for (; it < bound; ++it) {
    Rng rng = make_rng(cfg.seed, 0x7a5c, static_cast<std::uint64_t>(it));
    std::array<std::size_t, 4> pick{};
    for (int i = 0; i < 4; ++i) {
      bool fresh;
      do {
        pick[i] = usable[uniform_index(rng, usable.size())];
        fresh = std::find(pick.begin(), pick.begin() + i, pick[i]) == pick.begin() + i;
      } while (!fresh);
    }
    std::array<Correspondence, 4> sample;
    for (int i = 0; i < 4; ++i) {
      const auto& cands = hyps[pick[i]].candidates;
      sample[i] = {hyps[pick[i]].query.position, cands[uniform_index(rng, cands.size())].keypoint.position};
    }
    PoseSE3 pose;
    try {
      pose = epnp(std::span<const Correspondence>(sample), k);
    } catch (const Error&) {
      continue;
    }
    // A model that does not explain its own sample cannot win.
    bool consistent = true;
    for (const auto& c : sample) consistent = consistent && reprojection_error(pose, c, k) < cfg.reprojection_threshold;
    if (!consistent) continue;

    detail::InlierSet s = detail::count_inliers(hyps, pose, k, cfg.reprojection_threshold);
    if (!best_pose || detail::better(s, best)) {
      best = std::move(s);
      best_pose = pose;
      bound = std::max(it + 1, ransac_iteration_bound(static_cast<double>(best.hyps.size()) / n_hyps, k_eff, cfg.confidence,
                                                      cfg.max_iterations));
    }
  }
  if (!best_pose) return RansacFailure{RansacFailureReason::kAllSamplesDegenerate, 0, it};
  if (static_cast<int>(best.hyps.size()) < cfg.min_inliers) {
    return RansacFailure{RansacFailureReason::kNotEnoughInliers, best.hyps.size(), it};
  }

  // Refit on every inlier's best candidate; keep the refit unless it loses inliers.
  std::vector<Correspondence> all;
  for (std::size_t i = 0; i < best.hyps.size(); ++i) {
    const auto& h = hyps[best.hyps[i]];
    all.push_back({h.query.position, h.candidates[best.cand[i]].keypoint.position});
  }
  PoseSE3 final_pose = *best_pose;
  try {
    const PoseSE3 refit = epnp(all, k);
    const detail::InlierSet s = detail::count_inliers(hyps, refit, k, cfg.reprojection_threshold);
    if (s.hyps.size() >= best.hyps.size()) final_pose = refit;
  } catch (const Error&) {
  }
  const detail::InlierSet final_set = detail::count_inliers(hyps, final_pose, k, cfg.reprojection_threshold);
  if (static_cast<int>(final_set.hyps.size()) < cfg.min_inliers) {
    return RansacFailure{RansacFailureReason::kNotEnoughInliers, final_set.hyps.size(), it};
  }
  return PoseEstimate{final_pose, final_set.hyps, final_set.cand, final_set.mean_error(), it};
}

}  // namespace x2d3d
