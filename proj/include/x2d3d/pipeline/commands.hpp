#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "x2d3d/embed/checkpoint.hpp"
#include "x2d3d/pipeline/report.hpp"

namespace x2d3d {

/// Directory layout under --out-dir.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path images() const { return dataset() / "images"; }
  std::filesystem::path pairs() const { return dataset() / "pairs"; }
  std::filesystem::path map() const { return dataset() / "map.ply"; }
  std::filesystem::path trajectory() const { return dataset() / "trajectory.csv"; }
  std::filesystem::path submaps() const { return dataset() / "submaps.csv"; }
  std::filesystem::path model() const { return root / "model"; }
  std::filesystem::path checkpoint() const { return model() / "checkpoint.bin"; }
  std::filesystem::path loss() const { return model() / "loss.csv"; }
  std::filesystem::path training() const { return model() / "training.json"; }
  std::filesystem::path db() const { return root / "db"; }
  std::filesystem::path results() const { return root / "localize" / "results.csv"; }
  std::filesystem::path report_json() const { return root / "report.json"; }
  std::filesystem::path report_txt() const { return root / "report.txt"; }
  std::filesystem::path recall() const { return root / "recall.csv"; }
  std::filesystem::path curve() const { return root / "curve.csv"; }
  std::filesystem::path gradcheck() const { return root / "gradcheck.json"; }
};

inline std::filesystem::path db_file(const std::filesystem::path& dir, int submap) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "submap_%03d.db", submap);
  return dir / buf;
}

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitNoSuccess = 4 };

inline int exit_code_for(ErrorCode code) { return code == ErrorCode::kConfigInvalid ? kExitConfig : kExitData; }

/// --seed: one seed for scene, labeling, training and RANSAC.
inline void apply_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.scene.seed = seed;
  cfg.label.seed = seed;
  cfg.train.seed = seed;
  cfg.ransac.seed = seed;
  cfg.gradcheck.seed = seed;
}

struct CommandOptions {
  std::ostream* log = &std::cout;
  std::optional<std::filesystem::path> db_dir;  // localize against another run's databases
};

namespace detail {

inline std::ostream& log(const CommandOptions& opt) { return *opt.log; }

inline std::vector<SubmapRecord> test_submaps(const RunPaths& paths) {
  std::vector<SubmapRecord> out;
  for (const auto& r : io::read_submaps(paths.submaps())) {
    if (r.split == Split::kTest) out.push_back(r);
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyTestSet, "dataset has no test submap");
  return out;
}

inline const char* kResultsHeader =
    "frame,submap,status,keypoints,patches,candidates,inliers,iterations,mean_reprojection_error,wall_ms,"
    "r00,r01,r02,t0,r10,r11,r12,t1,r20,r21,r22,t2";

inline void write_results(const std::filesystem::path& path, const std::vector<std::pair<int, LocalizationResult>>& results) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f = io::open_out(path);
  f << kResultsHeader << '\n';
  for (const auto& [submap, r] : results) {
    f << r.frame << ',' << submap << ',' << (r.failure ? to_string(*r.failure) : "Ok") << ',' << r.keypoints << ','
      << r.patches << ',' << r.candidates << ',' << r.inliers << ',' << r.iterations << ',' << io::fmt(r.mean_reprojection_error)
      << ',' << io::fmt(r.wall_ms);
    if (r.pose) {
      const auto m = r.pose->matrix3x4();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) f << ',' << io::fmt(m(i, j));
    } else {
      for (int i = 0; i < 12; ++i) f << ',';
    }
    f << '\n';
  }
}

inline std::vector<std::pair<int, LocalizationResult>> read_results(const std::filesystem::path& path) {
  std::ifstream f = io::open_in(path);
  std::string line;
  std::getline(f, line);
  if (line != kResultsHeader) throw Error(ErrorCode::kFormat, "unexpected results.csv header");
  std::vector<std::pair<int, LocalizationResult>> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto c = io::split_csv(line);
    c.resize(22);
    LocalizationResult r;
    r.frame = io::to_int(c[0]);
    if (c[2] != "Ok") {
      r.failure = localize_failure_from_string(c[2]);
      if (!r.failure) throw Error(ErrorCode::kFormat, "unknown localization status " + c[2]);
    }
    r.keypoints = static_cast<std::size_t>(io::to_int(c[3]));
    r.patches = static_cast<std::size_t>(io::to_int(c[4]));
    r.candidates = static_cast<std::size_t>(io::to_int(c[5]));
    r.inliers = static_cast<std::size_t>(io::to_int(c[6]));
    r.iterations = io::to_int(c[7]);
    r.mean_reprojection_error = io::to_double(c[8]);
    r.wall_ms = io::to_double(c[9]);
    if (!r.failure) {
      Matrix3 rot;
      Point3 t;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) rot(i, j) = io::to_double(c[10 + 4 * i + j]);
        t(i) = io::to_double(c[13 + 4 * i]);
      }
      r.pose = PoseSE3(rot, t);
    }
    out.emplace_back(io::to_int(c[1]), std::move(r));
  }
  return out;
}

inline std::optional<TrainingSummary> read_training(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream f = io::open_in(path);
  const nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kFormat, "unreadable " + path.string());
  return TrainingSummary{j.at("initial_loss").get<double>(), j.at("final_loss").get<double>(), j.at("epochs").get<int>(),
                         j.at("pairs").get<std::size_t>(), j.at("keypoints").get<std::size_t>()};
}

}  // namespace detail

struct SynthSummary {
  std::size_t map_points = 0;
  std::size_t frames = 0;
  std::size_t submaps = 0;
  std::size_t pairs = 0;
  std::size_t keypoints = 0;
  std::size_t train_pairs = 0;
  std::size_t test_pairs = 0;
};

/// Scene, images, submaps and labeled pairs. Images are quantized to 8 bits
/// before detection so that labels match what later stages read from disk.
inline SynthSummary run_synth(const PipelineConfig& cfg, const RunPaths& paths, const CommandOptions& opt = {}) {
  Scene scene = generate_scene(cfg.scene);
  for (auto& img : scene.images)
    for (auto& v : img.data) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;

  std::filesystem::create_directories(paths.images());
  io::write_ply(paths.map(), scene.map);
  io::write_trajectory(paths.trajectory(), scene.trajectory);
  for (std::size_t f = 0; f < scene.images.size(); ++f) io::write_pgm(paths.images() / io::frame_name(static_cast<int>(f)), scene.images[f]);

  std::vector<std::vector<Keypoint2D>> kps2d(scene.images.size());
  for (std::size_t f = 0; f < scene.images.size(); ++f) kps2d[f] = detect_dog_keypoints(scene.images[f], cfg.dog);

  const std::vector<Submap> submaps = split_submaps(scene.map, scene.trajectory, cfg.submap);
  const int count = static_cast<int>(submaps.size());
  std::vector<SubmapRecord> records;
  std::vector<LabeledPair> pairs;
  int next_id = 0;
  for (const Submap& sm : submaps) {
    records.push_back(record_of(sm, count));
    const PointCloud cloud = without_ground(sm.cloud, cfg.ground);
    const std::vector<Keypoint3D> kps3d = cloud.empty() ? std::vector<Keypoint3D>{} : detect_iss(cloud, cfg.iss);
    std::vector<LabelView> views;
    for (int f : sm.frames) {
      const auto fu = static_cast<std::size_t>(f);
      views.push_back({f, sm.local_pose(scene.trajectory[fu].pose), &scene.images[fu], &scene.depths[fu], kps2d[fu]});
    }
    std::vector<LabeledPair> labeled = label_correspondences(sm, views, kps3d, cloud, cfg.scene.intrinsics, cfg.label, next_id);
    for (const auto& p : labeled) next_id = std::max(next_id, p.keypoint_id + 1);
    detail::log(opt) << "submap " << sm.id << " (" << to_string(split_of(sm.id, count)) << "): " << sm.frames.size()
                     << " frames, " << cloud.size() << " non-ground points, " << kps3d.size() << " ISS keypoints, "
                     << labeled.size() << " pairs\n";
    for (auto& p : labeled) pairs.push_back(std::move(p));
  }
  io::write_submaps(paths.submaps(), records);
  io::write_pairs(paths.pairs(), pairs, count);

  SynthSummary s;
  s.map_points = scene.map.size();
  s.frames = scene.trajectory.size();
  s.submaps = submaps.size();
  s.pairs = pairs.size();
  std::vector<int> ids;
  for (const auto& p : pairs) {
    ids.push_back(p.keypoint_id);
    (split_of(p.submap, count) == Split::kTest ? s.test_pairs : s.train_pairs)++;
  }
  std::sort(ids.begin(), ids.end());
  s.keypoints = static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
  detail::log(opt) << "synth: " << s.map_points << " map points, " << s.frames << " frames, " << s.submaps << " submaps, "
                   << s.pairs << " pairs (" << s.train_pairs << " train, " << s.test_pairs << " test) over " << s.keypoints
                   << " keypoints\n";
  return s;
}

/// Trains both branches on the train split and writes the checkpoint.
inline TrainingSummary run_train(const PipelineConfig& cfg, const RunPaths& paths, const CommandOptions& opt = {}) {
  std::vector<TrainingPair> pairs;
  for (auto& r : io::read_pairs(paths.pairs(), Split::kTrain)) {
    pairs.push_back({std::move(r.pair.patch), std::move(r.pair.volume), r.pair.keypoint_id});
  }
  if (cfg.train_max_pairs > 0 && static_cast<int>(pairs.size()) > cfg.train_max_pairs) pairs.resize(static_cast<std::size_t>(cfg.train_max_pairs));
  std::vector<int> ids;
  for (const auto& p : pairs) ids.push_back(p.keypoint_id);
  std::sort(ids.begin(), ids.end());
  const auto keypoints = static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
  detail::log(opt) << "train: " << pairs.size() << " pairs over " << keypoints << " keypoints\n";

  std::filesystem::create_directories(paths.model());
  std::string loss_csv = "epoch,loss\n";
  const TrainResult res = train(pairs, cfg.train, [&](int epoch, double loss) {
    loss_csv += std::to_string(epoch) + ',' + io::fmt(loss) + '\n';
    detail::log(opt) << "epoch " << epoch << " loss " << loss << '\n';
  });
  save_checkpoint(paths.checkpoint(), res.image, res.point);
  write_text(paths.loss(), loss_csv);

  TrainingSummary s{res.initial_loss, res.loss_history.empty() ? res.initial_loss : res.loss_history.back(), cfg.train.epochs,
                    pairs.size(), keypoints};
  const nlohmann::json j{{"initial_loss", s.initial_loss}, {"final_loss", s.final_loss}, {"epochs", s.epochs},
                         {"pairs", s.pairs}, {"keypoints", s.keypoints}, {"loss_history", res.loss_history}};
  write_text(paths.training(), j.dump(2) + '\n');
  detail::log(opt) << "train: loss " << s.initial_loss << " -> " << s.final_loss << '\n';
  return s;
}

/// One descriptor database per test submap, from its full local cloud.
inline std::vector<MapDbCounts> run_embed_map(const PipelineConfig& cfg, const RunPaths& paths, const CommandOptions& opt = {}) {
  const Checkpoint ck = load_checkpoint(paths.checkpoint());
  const PointCloud map = io::read_ply(paths.map());
  std::filesystem::create_directories(paths.db());
  std::vector<MapDbCounts> all;
  std::string stats = "submap,map_points,ground_free_points,iss_keypoints,volumes_rejected,entries\n";
  for (const auto& rec : detail::test_submaps(paths)) {
    const Submap sm = restore_submap(rec, map);
    MapDbCounts c;
    try {
      MapDb built = build_map_db(sm.cloud, ck.point, cfg);
      save_db(db_file(paths.db(), rec.id), built.db);
      c = built.counts;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyDatabase) throw;
      c.map_points = sm.cloud.size();
      std::filesystem::remove(db_file(paths.db(), rec.id));
    }
    stats += std::to_string(rec.id) + ',' + std::to_string(c.map_points) + ',' + std::to_string(c.ground_free_points) + ',' +
             std::to_string(c.iss_keypoints) + ',' + std::to_string(c.volumes_rejected) + ',' + std::to_string(c.entries) + '\n';
    detail::log(opt) << "embed-map: submap " << rec.id << ": " << c.map_points << " points -> " << c.ground_free_points
                     << " non-ground -> " << c.iss_keypoints << " ISS -> " << c.entries << " entries\n";
    all.push_back(c);
  }
  write_text(paths.db() / "db_stats.csv", stats);
  if (std::all_of(all.begin(), all.end(), [](const auto& c) { return c.entries == 0; })) {
    throw Error(ErrorCode::kEmptyDatabase, "no test submap produced a database");
  }
  return all;
}

/// Localizes every frame of every test submap against that submap's database.
inline std::vector<LocalizationResult> run_localize(const PipelineConfig& cfg, const RunPaths& paths, const CommandOptions& opt = {}) {
  const Checkpoint ck = load_checkpoint(paths.checkpoint());
  const std::filesystem::path db_dir = opt.db_dir.value_or(paths.db());
  std::vector<std::pair<int, LocalizationResult>> results;
  std::size_t ok = 0;
  for (const auto& rec : detail::test_submaps(paths)) {
    const std::filesystem::path file = db_file(db_dir, rec.id);
    if (!std::filesystem::exists(file)) throw Error(ErrorCode::kEmptyDatabase, "missing database " + file.string());
    const DescriptorDB db = load_db(file);
    for (int f = rec.first_frame; f <= rec.last_frame; ++f) {
      const GrayImage img = io::read_pgm(paths.images() / io::frame_name(f));
      LocalizationResult r = localize(f, img, db, ck.image, cfg.scene.intrinsics, cfg);
      ok += !r.failure;
      detail::log(opt) << "localize: frame " << f << ' ' << (r.failure ? to_string(*r.failure) : "Ok") << " inliers "
                       << r.inliers << '/' << r.patches << '\n';
      results.emplace_back(rec.id, std::move(r));
    }
  }
  detail::write_results(paths.results(), results);
  detail::log(opt) << "localize: " << ok << '/' << results.size() << " frames produced a pose\n";
  std::vector<LocalizationResult> out;
  for (auto& [submap, r] : results) out.push_back(std::move(r));
  return out;
}

/// recall@1..K of the test pairs against their submaps' keypoints.
inline std::vector<double> run_recall(const PipelineConfig& cfg, const RunPaths& paths, const CommandOptions& opt = {}) {
  const Checkpoint ck = load_checkpoint(paths.checkpoint());
  std::vector<LabeledPair> pairs;
  for (auto& r : io::read_pairs(paths.pairs(), Split::kTest)) pairs.push_back(std::move(r.pair));
  const std::vector<double> recall = recall_at_k(pairs, ck.image, ck.point, cfg.eval.recall_k_max, cfg.match.search);
  write_text(paths.recall(), recall_csv(recall));
  for (std::size_t k = 0; k < recall.size(); ++k) detail::log(opt) << "recall@" << k + 1 << ' ' << recall[k] << '\n';
  return recall;
}

/// Scores results.csv against ground truth and writes the reports.
inline EvalReport run_eval(const PipelineConfig& cfg, const RunPaths& paths, const CommandOptions& opt = {}) {
  const auto rows = detail::read_results(paths.results());
  const std::vector<FramePose> trajectory = io::read_trajectory(paths.trajectory());
  std::map<int, Point3> origin_of;
  for (const auto& rec : io::read_submaps(paths.submaps())) origin_of[rec.id] = rec.origin;
  std::map<int, PoseSE3> truth;
  std::vector<LocalizationResult> results;
  for (const auto& [submap, r] : rows) {
    const auto o = origin_of.find(submap);
    if (o != origin_of.end() && r.frame >= 0 && r.frame < static_cast<int>(trajectory.size())) {
      Submap sm;
      sm.origin = o->second;
      truth[r.frame] = sm.local_pose(trajectory[static_cast<std::size_t>(r.frame)].pose);
    }
    results.push_back(r);
  }
  EvalReport rep = evaluate(std::move(results), truth, cfg.eval);
  if (std::filesystem::exists(paths.recall())) rep.recall = read_recall_csv(paths.recall());
  const auto training = detail::read_training(paths.training());
  write_text(paths.report_json(), report_json(rep, training).dump(2) + '\n');
  write_text(paths.report_txt(), report_text(rep, training));
  write_text(paths.curve(), curve_csv(rep));
  detail::log(opt) << "eval: " << rep.successes << '/' << rep.frames << " frames within (" << cfg.eval.precision_m << " m, "
                   << cfg.eval.precision_deg << " deg), " << rep.tight_successes << " within (" << cfg.eval.tight_m << " m, "
                   << cfg.eval.tight_deg << " deg)\n";
  return rep;
}

inline GradcheckResult run_gradcheck(const PipelineConfig& cfg, const RunPaths& paths, const CommandOptions& opt = {}) {
  const GradcheckResult res = gradient_check(cfg.gradcheck, cfg.gradcheck_trials);
  std::filesystem::create_directories(paths.root);
  const nlohmann::json j{{"trials", cfg.gradcheck_trials}, {"step", cfg.gradcheck.step}, {"entries", res.entries},
                         {"max_rel_error", res.max_rel_error}};
  write_text(paths.gradcheck(), j.dump(2) + '\n');
  detail::log(opt) << "gradcheck: " << res.entries << " entries, max relative error " << res.max_rel_error << '\n';
  return res;
}

}  // namespace x2d3d
