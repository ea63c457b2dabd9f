#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "x2d3d/pipeline/pipeline.hpp"

namespace x2d3d {

inline constexpr int kReportSchemaVersion = 1;

struct TrainingSummary {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int epochs = 0;
  std::size_t pairs = 0;
  std::size_t keypoints = 0;
};

namespace detail {

inline nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

/// Machine-readable report. Every field is present on total failure; absent
/// averages are null. Wall-clock times are left out so reruns compare equal.
inline nlohmann::json report_json(const EvalReport& rep, const std::optional<TrainingSummary>& training) {
  using nlohmann::json;
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["metadata"] = {{"averages_over", "successes"}, {"pose_frame", "submap_local"}, {"curve_scaling", "joint_log"}};
  j["thresholds"] = {{"precision_m", rep.thresholds.precision_m},
                     {"precision_deg", rep.thresholds.precision_deg},
                     {"tight_m", rep.thresholds.tight_m},
                     {"tight_deg", rep.thresholds.tight_deg}};
  j["frames"] = rep.frames;
  j["successes"] = rep.successes;
  j["success_ratio"] = rep.success_ratio;
  j["tight_successes"] = rep.tight_successes;
  j["tight_success_ratio"] = rep.tight_success_ratio;
  j["mean_translation_error_m"] = detail::optional_number(rep.mean_translation_error);
  j["mean_rotation_error_deg"] = detail::optional_number(rep.mean_rotation_error);
  j["recall"] = rep.recall;
  json failures = json::object();
  for (auto f : {LocalizeFailure::kNoKeypoints, LocalizeFailure::kNoPatches, LocalizeFailure::kTooFewHypotheses,
                 LocalizeFailure::kNotEnoughInliers, LocalizeFailure::kAllSamplesDegenerate}) {
    std::size_t n = 0;
    for (const auto& r : rep.results) n += r.failure == f;
    failures[to_string(f)] = n;
  }
  j["failures"] = failures;
  json curve = json::array();
  for (const auto& p : rep.curve) {
    curve.push_back({{"translation_m", p.translation_m}, {"rotation_deg", p.rotation_deg}, {"success_ratio", p.success_ratio}});
  }
  j["curve"] = curve;
  if (training) {
    j["training"] = {{"initial_loss", training->initial_loss},
                     {"final_loss", training->final_loss},
                     {"epochs", training->epochs},
                     {"pairs", training->pairs},
                     {"keypoints", training->keypoints}};
  } else {
    j["training"] = nullptr;
  }
  json results = json::array();
  for (const auto& r : rep.results) {
    results.push_back({{"frame", r.frame},
                       {"status", r.failure ? to_string(*r.failure) : "Ok"},
                       {"success", within(r, rep.thresholds.precision_m, rep.thresholds.precision_deg)},
                       {"translation_error_m", detail::optional_number(r.translation_error)},
                       {"rotation_error_deg", detail::optional_number(r.rotation_error)},
                       {"keypoints", r.keypoints},
                       {"patches", r.patches},
                       {"candidates", r.candidates},
                       {"inliers", r.inliers},
                       {"iterations", r.iterations}});
  }
  j["results"] = results;
  return j;
}

inline std::string report_text(const EvalReport& rep, const std::optional<TrainingSummary>& training) {
  std::string out;
  char buf[256];
  auto line = [&](const char* f, auto... args) {
    std::snprintf(buf, sizeof buf, f, args...);
    out += buf;
    out += '\n';
  };
  auto opt = [](const std::optional<double>& v) { return v ? *v : std::nan(""); };
  line("frames                 %zu", rep.frames);
  line("success (%.3g m, %.3g deg)  %zu  (%.4f)", rep.thresholds.precision_m, rep.thresholds.precision_deg, rep.successes,
       rep.success_ratio);
  line("success (%.3g m, %.3g deg)  %zu  (%.4f)", rep.thresholds.tight_m, rep.thresholds.tight_deg, rep.tight_successes,
       rep.tight_success_ratio);
  line("mean T error (m)       %.4f   over successes", opt(rep.mean_translation_error));
  line("mean R error (deg)     %.4f   over successes", opt(rep.mean_rotation_error));
  if (training) {
    line("training loss          %.4f -> %.4f  (%d epochs, %zu pairs, %zu keypoints)", training->initial_loss,
         training->final_loss, training->epochs, training->pairs, training->keypoints);
  }
  if (!rep.recall.empty()) {
    out += "\n   k  recall\n";
    for (std::size_t k = 0; k < rep.recall.size(); ++k) line("%4zu  %.4f", k + 1, rep.recall[k]);
  }
  out += "\n frame  status                 T err (m)   R err (deg)  inliers  candidates\n";
  for (const auto& r : rep.results) {
    line("%6d  %-20s  %10.4f  %12.4f  %7zu  %10zu", r.frame, r.failure ? to_string(*r.failure) : "Ok", opt(r.translation_error),
         opt(r.rotation_error), r.inliers, r.candidates);
  }
  return out;
}

inline std::string curve_csv(const EvalReport& rep) {
  std::string out = "translation_m,rotation_deg,success_ratio\n";
  for (const auto& p : rep.curve) {
    out += io::fmt(p.translation_m) + ',' + io::fmt(p.rotation_deg) + ',' + io::fmt(p.success_ratio) + '\n';
  }
  return out;
}

inline std::string recall_csv(const std::vector<double>& recall) {
  std::string out = "k,recall\n";
  for (std::size_t k = 0; k < recall.size(); ++k) out += std::to_string(k + 1) + ',' + io::fmt(recall[k]) + '\n';
  return out;
}

inline std::vector<double> read_recall_csv(const std::filesystem::path& path) {
  std::ifstream f = io::open_in(path);
  std::string line;
  std::getline(f, line);
  std::vector<double> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c = io::split_csv(line);
    if (c.size() != 2 || io::to_int(c[0]) != static_cast<int>(out.size()) + 1) throw Error(ErrorCode::kFormat, "bad recall.csv row");
    out.push_back(io::to_double(c[1]));
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f = io::open_out(path);
  f << text;
}

}  // namespace x2d3d
