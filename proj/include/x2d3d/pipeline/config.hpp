#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <toml.hpp>

#include "x2d3d/detect3d/ground.hpp"
#include "x2d3d/embed/gradcheck.hpp"
#include "x2d3d/embed/trainer.hpp"
#include "x2d3d/match/descriptor_db.hpp"
#include "x2d3d/pose/ransac.hpp"
#include "x2d3d/synth/dataset.hpp"

namespace x2d3d {

struct MatchConfig {
  int k = 5;
  double max_distance = 0.0;  // optional descriptor-distance pre-filter; 0 disables it
  SearchMode search = SearchMode::kAuto;
};

struct EvalConfig {
  double precision_m = 10.0;
  double precision_deg = 45.0;
  double tight_m = 0.5;
  double tight_deg = 2.0;
  int curve_points = 20;
  int recall_k_max = 10;
};

struct PipelineConfig {
  SceneConfig scene;
  SubmapParams submap;
  LabelParams label;
  DogParams dog;
  double query_nms = 0.0;  // px; 2D NMS on query keypoints, 0 disables it
  GroundParams ground;
  IssParams iss;
  TrainConfig train;
  int train_max_pairs = 0;  // 0 keeps every training pair
  GradcheckConfig gradcheck;
  int gradcheck_trials = 10;
  MatchConfig match;
  RansacConfig ransac;
  EvalConfig eval;

  void validate() const {
    scene.validate();
    train.validate();
    ransac.validate();
    if (match.k < 1) throw Error(ErrorCode::kConfigInvalid, "match.k must be >= 1");
    if (match.max_distance < 0.0) throw Error(ErrorCode::kConfigInvalid, "match.max_distance must be >= 0");
    if (label.min_views < 1 || !(label.max_residual > 0.0)) throw Error(ErrorCode::kConfigInvalid, "bad labeling thresholds");
    if (eval.curve_points < 2 || eval.recall_k_max < 1) throw Error(ErrorCode::kConfigInvalid, "bad eval sizes");
    if (!(eval.precision_m > 0.0) || !(eval.precision_deg > 0.0) || !(eval.tight_m > 0.0) || !(eval.tight_deg > 0.0)) {
      throw Error(ErrorCode::kConfigInvalid, "precision thresholds must be positive");
    }
    if (!(iss.salient_radius > 0.0) || !(iss.nms_radius > 0.0) || !(iss.gamma21 > 0.0 && iss.gamma21 < 1.0) ||
        !(iss.gamma32 > 0.0 && iss.gamma32 < 1.0)) {
      throw Error(ErrorCode::kConfigInvalid, "bad ISS parameters");
    }
    if (label.volume.pad_count < 1 || label.volume.min_points < 1) throw Error(ErrorCode::kConfigInvalid, "bad volume sizes");
  }
};

namespace detail {

// Reads one [section], rejecting keys it does not know and values of the
// wrong type.
class SectionReader {
 public:
  SectionReader(const toml::table& root, std::string name) : name_(std::move(name)) {
    if (const toml::node* n = root.get(name_)) {
      table_ = n->as_table();
      if (!table_) fail("is not a table");
    }
  }

  ~SectionReader() noexcept(false) {
    if (!table_ || std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : *table_) {
      if (!seen_.count(std::string(key.str()))) fail("unknown key '" + std::string(key.str()) + "'");
    }
  }

  void read(const char* key, double& out) {
    if (const toml::node* n = find(key)) {
      if (auto v = n->value<double>()) {
        out = *v;
      } else {
        fail(std::string(key) + " must be a number");
      }
    }
  }

  void read(const char* key, int& out) {
    if (const toml::node* n = find(key)) {
      if (!n->is_integer()) fail(std::string(key) + " must be an integer");
      out = static_cast<int>(*n->value<std::int64_t>());
    }
  }

  void read(const char* key, std::uint64_t& out) {
    if (const toml::node* n = find(key)) {
      const auto v = n->value<std::int64_t>();
      if (!n->is_integer() || *v < 0) fail(std::string(key) + " must be a non-negative integer");
      out = static_cast<std::uint64_t>(*v);
    }
  }

  void read(const char* key, std::string& out) {
    if (const toml::node* n = find(key)) {
      if (!n->is_string()) fail(std::string(key) + " must be a string");
      out = *n->value<std::string>();
    }
  }

  void read(const char* key, std::array<int, 3>& out) {
    if (const toml::node* n = find(key)) {
      const toml::array* arr = n->as_array();
      if (!arr || arr->size() != 3) fail(std::string(key) + " must be an array of 3 integers");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(*arr)[i].is_integer()) fail(std::string(key) + " must be an array of 3 integers");
        out[i] = static_cast<int>(*(*arr)[i].value<std::int64_t>());
      }
    }
  }

 private:
  const toml::node* find(const char* key) {
    seen_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::kConfigInvalid, "[" + name_ + "] " + what);
  }

  std::string name_;
  const toml::table* table_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace detail

inline PipelineConfig parse_config(const toml::table& root) {
  for (const auto& [key, value] : root) {
    static const std::set<std::string> kSections{"scene", "detect2d", "detect3d", "train", "match", "ransac", "eval"};
    if (!kSections.count(std::string(key.str()))) {
      throw Error(ErrorCode::kConfigInvalid, "unknown section [" + std::string(key.str()) + "]");
    }
  }
  PipelineConfig c;
  {
    detail::SectionReader s(root, "scene");
    auto& sc = c.scene;
    s.read("seed", sc.seed);
    s.read("n_structures", sc.n_structures);
    s.read("extent", sc.extent);
    s.read("points_per_m2", sc.points_per_m2);
    s.read("ground_points_per_m2", sc.ground_points_per_m2);
    s.read("texture_cell", sc.texture_cell);
    s.read("texture_noise", sc.texture_noise);
    s.read("n_frames", sc.n_frames);
    s.read("frame_spacing", sc.frame_spacing);
    s.read("camera_height", sc.camera_height);
    s.read("camera_pitch_deg", sc.camera_pitch_deg);
    s.read("pose_jitter_deg", sc.pose_jitter_deg);
    s.read("fx", sc.intrinsics.fx);
    s.read("fy", sc.intrinsics.fy);
    s.read("cx", sc.intrinsics.cx);
    s.read("cy", sc.intrinsics.cy);
    s.read("width", sc.intrinsics.width);
    s.read("height", sc.intrinsics.height);
    s.read("lateral_min", sc.lateral_min);
    s.read("lateral_max", sc.lateral_max);
    s.read("sky", sc.sky);
    s.read("submap_length", sc.submap_length);
    s.read("submap_margin", c.submap.margin);
    s.read("view_depth", c.submap.view_depth);
    s.read("label_residual", c.label.max_residual);
    s.read("label_min_views", c.label.min_views);
    s.read("label_nms_3d", c.label.nms_3d);
    s.read("label_nms_2d", c.label.nms_2d);
    s.read("label_seed", c.label.seed);
  }
  c.submap.length = c.scene.submap_length;
  {
    detail::SectionReader s(root, "detect2d");
    s.read("n_octaves", c.dog.n_octaves);
    s.read("scales_per_octave", c.dog.scales_per_octave);
    s.read("contrast_threshold", c.dog.contrast_threshold);
    s.read("sigma0", c.dog.sigma0);
    s.read("edge_ratio", c.dog.edge_ratio);
    s.read("patch_base_size", c.label.patch.base_size);
    s.read("scale_threshold", c.label.patch.scale_threshold);
    s.read("query_nms", c.query_nms);
  }
  {
    detail::SectionReader s(root, "detect3d");
    s.read("ground_inlier_distance", c.ground.inlier_distance);
    s.read("ground_iterations", c.ground.iterations);
    s.read("ground_max_tilt_deg", c.ground.max_tilt_deg);
    s.read("ground_min_fraction", c.ground.min_inlier_fraction);
    s.read("ground_seed", c.ground.seed);
    s.read("salient_radius", c.iss.salient_radius);
    s.read("nms_radius", c.iss.nms_radius);
    s.read("gamma21", c.iss.gamma21);
    s.read("gamma32", c.iss.gamma32);
    s.read("min_neighbors", c.iss.min_neighbors);
    s.read("volume_radius", c.label.volume.radius);
    s.read("volume_min_points", c.label.volume.min_points);
    s.read("volume_pad_count", c.label.volume.pad_count);
  }
  {
    detail::SectionReader s(root, "train");
    auto& t = c.train;
    s.read("alpha", t.alpha);
    s.read("learning_rate", t.adam.learning_rate);
    s.read("batch_size", t.batch_size);
    s.read("epochs", t.epochs);
    s.read("seed", t.seed);
    int dim = t.image.dim;
    s.read("dim", dim);
    t.image.dim = t.point.dim = dim;
    s.read("image_channels", t.image.channels);
    s.read("image_hidden", t.image.hidden);
    s.read("point_widths", t.point.widths);
    s.read("point_hidden", t.point.hidden);
    s.read("max_pairs", c.train_max_pairs);
    s.read("gradcheck_trials", c.gradcheck_trials);
    s.read("gradcheck_step", c.gradcheck.step);
    s.read("gradcheck_seed", c.gradcheck.seed);
  }
  c.gradcheck.alpha = c.train.alpha;
  {
    detail::SectionReader s(root, "match");
    s.read("k", c.match.k);
    s.read("max_distance", c.match.max_distance);
    std::string mode = "auto";
    s.read("search", mode);
    if (mode == "auto") {
      c.match.search = SearchMode::kAuto;
    } else if (mode == "kdtree") {
      c.match.search = SearchMode::kKdTree;
    } else if (mode == "brute_force") {
      c.match.search = SearchMode::kBruteForce;
    } else {
      throw Error(ErrorCode::kConfigInvalid, "[match] search must be auto, kdtree or brute_force");
    }
  }
  {
    detail::SectionReader s(root, "ransac");
    s.read("reprojection_threshold", c.ransac.reprojection_threshold);
    s.read("confidence", c.ransac.confidence);
    s.read("max_iterations", c.ransac.max_iterations);
    s.read("min_inliers", c.ransac.min_inliers);
    s.read("seed", c.ransac.seed);
  }
  {
    detail::SectionReader s(root, "eval");
    s.read("precision_m", c.eval.precision_m);
    s.read("precision_deg", c.eval.precision_deg);
    s.read("tight_m", c.eval.tight_m);
    s.read("tight_deg", c.eval.tight_deg);
    s.read("curve_points", c.eval.curve_points);
    s.read("recall_k_max", c.eval.recall_k_max);
  }
  c.validate();
  return c;
}

inline PipelineConfig parse_config_string(std::string_view text) {
  try {
    return parse_config(toml::parse(text));
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::kConfigInvalid, std::string("TOML: ") + std::string(e.description()));
  }
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kConfigInvalid, "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_string(ss.str());
}

}  // namespace x2d3d
