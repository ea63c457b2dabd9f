#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "x2d3d/pipeline/commands.hpp"

namespace x2d3d {
namespace {

namespace fs = std::filesystem;

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an x2d3d::Error";
  return ErrorCode::kIo;
}

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("x2d3d_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string Slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, EmptyDocumentGivesDefaults) {
  const PipelineConfig c = parse_config_string("");
  EXPECT_EQ(c.match.k, 5);
  EXPECT_EQ(c.train.alpha, 5.0);
  EXPECT_EQ(c.train.adam.learning_rate, 6e-5);
  EXPECT_EQ(c.train.image.dim, 128);
  EXPECT_EQ(c.ransac.reprojection_threshold, 5.0);
  EXPECT_EQ(c.ransac.min_inliers, 12);
  EXPECT_EQ(c.eval.precision_m, 10.0);
  EXPECT_EQ(c.eval.precision_deg, 45.0);
  EXPECT_EQ(c.eval.curve_points, 20);
  EXPECT_EQ(c.scene.submap_length, 60.0);
  EXPECT_EQ(c.label.max_residual, 3.0);
  EXPECT_EQ(c.label.min_views, 3);
  EXPECT_EQ(c.label.nms_3d, 4.0);
  EXPECT_EQ(c.label.nms_2d, 32.0);
  EXPECT_EQ(c.label.volume.pad_count, 1024);
}

TEST(Config, SectionsOverrideFields) {
  const PipelineConfig c = parse_config_string(R"(
[scene]
seed = 9
n_frames = 20
fx = 300.0
view_depth = 15.0
[detect2d]
contrast_threshold = 0.01
[detect3d]
salient_radius = 0.4
volume_pad_count = 512
[train]
dim = 32
point_widths = [8, 16, 32]
epochs = 3
[match]
k = 3
search = "brute_force"
[ransac]
min_inliers = 6
[eval]
tight_m = 1.0
)");
  EXPECT_EQ(c.scene.seed, 9u);
  EXPECT_EQ(c.scene.n_frames, 20);
  EXPECT_EQ(c.scene.intrinsics.fx, 300.0);
  EXPECT_EQ(c.submap.view_depth, 15.0);
  EXPECT_EQ(c.dog.contrast_threshold, 0.01);
  EXPECT_EQ(c.iss.salient_radius, 0.4);
  EXPECT_EQ(c.label.volume.pad_count, 512);
  EXPECT_EQ(c.train.image.dim, 32);
  EXPECT_EQ(c.train.point.dim, 32);
  EXPECT_EQ(c.train.point.widths, (std::array<int, 3>{8, 16, 32}));
  EXPECT_EQ(c.match.k, 3);
  EXPECT_EQ(c.match.search, SearchMode::kBruteForce);
  EXPECT_EQ(c.ransac.min_inliers, 6);
  EXPECT_EQ(c.eval.tight_m, 1.0);
}

TEST(Config, IntegerAcceptedWhereRealExpected) {
  EXPECT_EQ(parse_config_string("[scene]\nextent = 100\n").scene.extent, 100.0);
}

TEST(Config, RejectsBadDocuments) {
  for (const char* doc : {"[scene]\nunknown_key = 1\n", "[nonsense]\nx = 1\n", "[match]\nk = \"five\"\n", "[match]\nk = 0\n",
                          "[ransac]\nconfidence = 1.5\n", "[scene]\nextent = -1.0\n", "[match]\nsearch = \"lsh\"\n",
                          "[train]\npoint_widths = [1, 2]\n", "[scene\nseed = 1\n", "scene = 3\n"}) {
    EXPECT_EQ(CodeOf([&] { parse_config_string(doc); }), ErrorCode::kConfigInvalid) << doc;
  }
}

TEST(Config, MissingFileIsConfigError) {
  EXPECT_EQ(CodeOf([] { load_config("/nonexistent/x2d3d.toml"); }), ErrorCode::kConfigInvalid);
}

TEST(Config, ShippedConfigsParse) {
  const fs::path dir = fs::path(X2D3D_SOURCE_DIR) / "configs";
  const PipelineConfig d = load_config(dir / "default.toml"), builtin;
  EXPECT_EQ(d.scene.n_frames, builtin.scene.n_frames);
  EXPECT_EQ(d.scene.intrinsics.fx, builtin.scene.intrinsics.fx);
  EXPECT_EQ(d.submap.margin, builtin.submap.margin);
  EXPECT_EQ(d.dog.contrast_threshold, builtin.dog.contrast_threshold);
  EXPECT_EQ(d.ground.inlier_distance, builtin.ground.inlier_distance);
  EXPECT_EQ(d.iss.nms_radius, builtin.iss.nms_radius);
  EXPECT_EQ(d.train.image.channels, builtin.train.image.channels);
  EXPECT_EQ(d.train.point.widths, builtin.train.point.widths);
  EXPECT_EQ(d.gradcheck.step, builtin.gradcheck.step);
  EXPECT_EQ(d.ransac.seed, builtin.ransac.seed);
  EXPECT_EQ(d.eval.recall_k_max, builtin.eval.recall_k_max);
  EXPECT_NO_THROW(load_config(dir / "e2e.toml"));
  EXPECT_NO_THROW(load_config(dir / "determinism.toml"));
}

TEST(Config, SeedFlagReachesEveryStage) {
  PipelineConfig c;
  apply_seed(c, 77);
  EXPECT_EQ(c.scene.seed, 77u);
  EXPECT_EQ(c.label.seed, 77u);
  EXPECT_EQ(c.train.seed, 77u);
  EXPECT_EQ(c.ransac.seed, 77u);
}

// ---------------------------------------------------------------------------
// Map database

PointEmbedder SmallPointNet(std::uint64_t seed = 1) { return PointEmbedder(PointNetConfig{{8, 16, 32}, 16, 16}, seed); }
ImageEmbedder SmallImageNet(std::uint64_t seed = 2) { return ImageEmbedder(ImageNetConfig{kPatchSide, {2, 4, 8}, 16, 16}, seed); }

PointCloud GroundWithBoxes(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  PointCloud c;
  for (int i = 0; i < 6000; ++i) c.points.emplace_back(uniform(rng, -10, 10), uniform(rng, -10, 10), 0.0);
  for (const Point3& lo : {Point3(-4, -4, 0), Point3(3, 2, 0)}) {
    for (int i = 0; i < 4000; ++i) {
      Point3 p = lo + Point3(uniform(rng, 0, 2), uniform(rng, 0, 2), uniform(rng, 0, 2));
      const int axis = static_cast<int>(uniform_index(rng, 3));
      p(axis) = lo(axis) + (axis == 2 ? 2.0 : 2.0 * static_cast<double>(uniform_index(rng, 2)));
      c.points.push_back(p);
    }
  }
  return c;
}

TEST(MapDb, PlaneOnlyMapIsEmptyDatabase) {
  Rng rng = make_rng(4);
  PointCloud plane;
  for (int i = 0; i < 5000; ++i) plane.points.emplace_back(uniform(rng, -10, 10), uniform(rng, -10, 10), 0.0);
  EXPECT_EQ(CodeOf([&] { build_map_db(plane, SmallPointNet(), PipelineConfig{}); }), ErrorCode::kEmptyDatabase);
}

TEST(MapDb, BoxSceneGivesUnitNormDescriptors) {
  const MapDb m = build_map_db(GroundWithBoxes(1), SmallPointNet(), PipelineConfig{});
  EXPECT_GT(m.db.size(), 0u);
  EXPECT_EQ(m.counts.entries, m.db.size());
  EXPECT_EQ(m.counts.iss_keypoints, m.counts.entries + m.counts.volumes_rejected);
  // Box walls lose the strip within the ground inlier distance.
  EXPECT_GT(m.counts.ground_free_points, 7000u);
  EXPECT_LE(m.counts.ground_free_points, 8000u);
  for (const auto& e : m.db.entries()) {
    EXPECT_NEAR(e.descriptor.values.norm(), 1.0, 1e-9);
    EXPECT_GT(e.keypoint.position.z(), 0.1);
  }
}

TEST(MapDb, RepeatedBuildsWriteIdenticalFiles) {
  const fs::path dir = TempDir("db");
  const PointCloud map = GroundWithBoxes(2);
  save_db(dir / "a.db", build_map_db(map, SmallPointNet(), PipelineConfig{}).db);
  save_db(dir / "b.db", build_map_db(map, SmallPointNet(), PipelineConfig{}).db);
  EXPECT_EQ(Slurp(dir / "a.db"), Slurp(dir / "b.db"));
  EXPECT_FALSE(Slurp(dir / "a.db").empty());
}

// ---------------------------------------------------------------------------
// Localization

DescriptorDB RandomDb(int n, int dim, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<DbEntry> entries;
  for (int i = 0; i < n; ++i) {
    DbEntry e;
    e.keypoint.position = Point3(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, 5, 20));
    e.descriptor.values = Eigen::VectorXd::NullaryExpr(dim, [&] { return gaussian(rng); }).normalized();
    entries.push_back(std::move(e));
  }
  return DescriptorDB::build(std::move(entries));
}

GrayImage TexturedImage(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  GrayImage img(512, 384);
  for (auto& v : img.data) v = uniform(rng, 0.0, 1.0);
  return gaussian_blur(img, 2.0);
}

TEST(Localize, BlankImageHasNoKeypoints) {
  const PipelineConfig cfg;
  const LocalizationResult r =
      localize(3, GrayImage(512, 384, 0.5), RandomDb(10, 16, 1), SmallImageNet(), cfg.scene.intrinsics, cfg);
  ASSERT_TRUE(r.failure.has_value());
  EXPECT_EQ(*r.failure, LocalizeFailure::kNoKeypoints);
  EXPECT_FALSE(r.pose.has_value());
  EXPECT_EQ(r.frame, 3);
  EXPECT_EQ(r.candidates, 0u);
}

TEST(Localize, CandidateCountConservation) {
  PipelineConfig cfg;
  cfg.dog.contrast_threshold = 0.005;
  for (const int db_size : {3, 40}) {
    const LocalizationResult r =
        localize(0, TexturedImage(7), RandomDb(db_size, 16, 2), SmallImageNet(), cfg.scene.intrinsics, cfg);
    ASSERT_GT(r.patches, 0u);
    EXPECT_EQ(r.candidates, r.patches * static_cast<std::size_t>(std::min(cfg.match.k, db_size)));
    EXPECT_LE(r.inliers, r.patches);
    EXPECT_LE(r.patches, r.keypoints);
    EXPECT_TRUE(r.failure.has_value() != r.pose.has_value());
  }
}

TEST(Localize, DistanceFilterDropsCandidates) {
  PipelineConfig cfg;
  cfg.dog.contrast_threshold = 0.005;
  cfg.match.max_distance = 1e-6;
  const LocalizationResult r = localize(0, TexturedImage(7), RandomDb(40, 16, 2), SmallImageNet(), cfg.scene.intrinsics, cfg);
  EXPECT_EQ(r.candidates, 0u);
  ASSERT_TRUE(r.failure.has_value());
  EXPECT_EQ(*r.failure, LocalizeFailure::kTooFewHypotheses);
}

// ---------------------------------------------------------------------------
// Evaluation

PoseSE3 PoseAt(double x, double yaw_deg = 0.0) {
  return {Eigen::AngleAxisd(deg2rad(yaw_deg), Point3::UnitY()).toRotationMatrix(), Point3(x, 0, 0)};
}

LocalizationResult Estimated(int frame, const PoseSE3& pose) {
  LocalizationResult r;
  r.frame = frame;
  r.pose = pose;
  return r;
}

LocalizationResult Failed(int frame) {
  LocalizationResult r;
  r.frame = frame;
  r.failure = LocalizeFailure::kNotEnoughInliers;
  return r;
}

TEST(Evaluate, ExactEstimateHasZeroError) {
  const EvalReport rep = evaluate({Estimated(0, PoseAt(2.0, 10.0))}, {{0, PoseAt(2.0, 10.0)}}, EvalConfig{});
  ASSERT_EQ(rep.results.size(), 1u);
  EXPECT_NEAR(*rep.results[0].translation_error, 0.0, 1e-12);
  EXPECT_NEAR(*rep.results[0].rotation_error, 0.0, 1e-6);
  EXPECT_EQ(rep.successes, 1u);
  EXPECT_EQ(rep.success_ratio, 1.0);
}

TEST(Evaluate, ElevenMetersFailsRegardlessOfRotation) {
  // Identity rotation: camera centers differ by the translation offset.
  const EvalReport rep = evaluate({Estimated(0, PoseAt(11.0))}, {{0, PoseAt(0.0)}}, EvalConfig{});
  EXPECT_NEAR(*rep.results[0].translation_error, 11.0, 1e-12);
  EXPECT_EQ(*rep.results[0].rotation_error, 0.0);
  EXPECT_EQ(rep.successes, 0u);
  EXPECT_FALSE(rep.mean_translation_error.has_value());
}

TEST(Evaluate, FortySixDegreesFails) {
  const EvalReport rep = evaluate({Estimated(0, PoseAt(0.0, 46.0))}, {{0, PoseAt(0.0)}}, EvalConfig{});
  EXPECT_EQ(rep.successes, 0u);
}

TEST(Evaluate, AveragesOverSuccessesOnly) {
  // Frame 0: 1 m and 5 degrees off; frame 1: no pose.
  const PoseSE3 truth = PoseAt(0.0);
  const PoseSE3 est(Eigen::AngleAxisd(deg2rad(5.0), Point3::UnitY()).toRotationMatrix(), Point3::Zero());
  const PoseSE3 shifted(est.rotation(), est.rotation() * Point3(-1.0, 0.0, 0.0));  // center at (1, 0, 0)
  const EvalReport rep = evaluate({Estimated(0, shifted), Failed(1)}, {{0, truth}, {1, truth}}, EvalConfig{});
  EXPECT_EQ(rep.success_ratio, 0.5);
  EXPECT_NEAR(*rep.mean_translation_error, 1.0, 1e-12);
  EXPECT_NEAR(*rep.mean_rotation_error, 5.0, 1e-9);
}

TEST(Evaluate, MissingGroundTruthRaises) {
  EXPECT_EQ(CodeOf([] { evaluate({Failed(4)}, {{0, PoseAt(0)}}, EvalConfig{}); }), ErrorCode::kMissingGroundTruth);
}

TEST(Evaluate, CurveIsLogSpacedAndMonotone) {
  std::vector<LocalizationResult> results;
  std::map<int, PoseSE3> truth;
  for (int i = 0; i < 10; ++i) {
    results.push_back(Estimated(i, PoseAt(std::pow(10.0, -2.0 + 0.4 * i))));
    truth[i] = PoseAt(0.0);
  }
  const EvalReport rep = evaluate(results, truth, EvalConfig{});
  ASSERT_EQ(rep.curve.size(), 20u);
  EXPECT_NEAR(rep.curve.front().translation_m, 0.01, 1e-12);
  EXPECT_NEAR(rep.curve.back().translation_m, 100.0, 1e-9);
  EXPECT_NEAR(rep.curve.back().rotation_deg, 450.0, 1e-9);
  for (std::size_t i = 1; i < rep.curve.size(); ++i) {
    EXPECT_NEAR(rep.curve[i].translation_m / rep.curve[i - 1].translation_m, std::pow(10.0, 4.0 / 19.0), 1e-9);
    EXPECT_GE(rep.curve[i].success_ratio, rep.curve[i - 1].success_ratio);
  }
  EXPECT_EQ(rep.curve.back().success_ratio, 1.0);
}

TEST(Evaluate, ResultsSortedByFrame) {
  const EvalReport rep = evaluate({Failed(5), Failed(2), Failed(9)}, {{2, PoseAt(0)}, {5, PoseAt(0)}, {9, PoseAt(0)}}, EvalConfig{});
  EXPECT_EQ(rep.results[0].frame, 2);
  EXPECT_EQ(rep.results[2].frame, 9);
}

TEST(Report, TotalFailureKeepsEveryField) {
  const EvalReport rep = evaluate({Failed(0), Failed(1)}, {{0, PoseAt(0)}, {1, PoseAt(0)}}, EvalConfig{});
  const nlohmann::json j = report_json(rep, std::nullopt);
  for (const char* key : {"schema_version", "metadata", "thresholds", "frames", "successes", "success_ratio", "tight_successes",
                          "tight_success_ratio", "mean_translation_error_m", "mean_rotation_error_deg", "recall", "failures",
                          "curve", "training", "results"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_TRUE(j["mean_translation_error_m"].is_null());
  EXPECT_EQ(j["successes"], 0);
  EXPECT_EQ(j["failures"]["NotEnoughInliers"], 2);
  EXPECT_EQ(j["metadata"]["averages_over"], "successes");
  EXPECT_TRUE(j["results"][0]["translation_error_m"].is_null());
  EXPECT_EQ(j["results"][1]["status"], "NotEnoughInliers");
  EXPECT_EQ(report_json(rep, std::nullopt).dump(), j.dump());
}

TEST(Report, RecallCsvRoundTrip) {
  const fs::path dir = TempDir("recall");
  const std::vector<double> recall{0.25, 0.5, 0.5, 0.875};
  write_text(dir / "recall.csv", recall_csv(recall));
  EXPECT_EQ(read_recall_csv(dir / "recall.csv"), recall);
}

TEST(Report, ResultsCsvRoundTrip) {
  const fs::path dir = TempDir("results");
  LocalizationResult ok = Estimated(4, PoseAt(1.25, 33.0));
  ok.inliers = 17;
  ok.candidates = 250;
  ok.mean_reprojection_error = 0.75;
  detail::write_results(dir / "r.csv", {{2, ok}, {2, Failed(5)}});
  const auto back = detail::read_results(dir / "r.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, 2);
  EXPECT_EQ(back[0].second.pose->matrix3x4(), ok.pose->matrix3x4());
  EXPECT_EQ(back[0].second.inliers, 17u);
  EXPECT_EQ(back[0].second.mean_reprojection_error, 0.75);
  EXPECT_EQ(*back[1].second.failure, LocalizeFailure::kNotEnoughInliers);
  EXPECT_FALSE(back[1].second.pose.has_value());
}

// ---------------------------------------------------------------------------
// Recall

Patch NoisePatch(Rng& rng) {
  GrayImage raw(kPatchSide, kPatchSide);
  for (auto& v : raw.data) v = uniform(rng, 0.0, 1.0);
  return preprocess_patch(gaussian_blur(raw, 1.5));
}

LocalVolume NoiseVolume(Rng& rng, int n = 64) {
  LocalVolume v;
  for (int i = 0; i < n; ++i) v.points.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  v.original_count = n;
  return v;
}

TEST(Recall, MemorizedToySetIsPerfect) {
  // Five distinct pairs: ramps of different orientation against spheres of different radius.
  Rng rng = make_rng(21);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 5; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / 5.0;
    GrayImage raw(kPatchSide, kPatchSide);
    for (int y = 0; y < kPatchSide; ++y) {
      for (int x = 0; x < kPatchSide; ++x) raw.at(x, y) = 0.5 + 0.004 * (std::cos(theta) * x + std::sin(theta) * y);
    }
    LocalVolume v;
    for (int j = 0; j < 64; ++j) {
      const Point3 d(gaussian(rng), gaussian(rng), gaussian(rng));
      v.points.push_back((0.2 + 0.2 * i) * d.normalized());
    }
    v.original_count = 64;
    pairs.push_back({preprocess_patch(raw), std::move(v), i});
  }
  TrainConfig cfg;
  cfg.image = {kPatchSide, {2, 4, 8}, 16, 16};
  cfg.point = {{8, 16, 32}, 16, 16};
  cfg.adam.learning_rate = 1e-2;
  cfg.batch_size = 5;
  cfg.epochs = 400;
  const TrainResult model = train(pairs, cfg);
  ASSERT_LT(model.loss_history.back(), model.initial_loss);

  std::vector<DbEntry> entries;
  std::vector<int> ids;
  std::vector<RecallQuery> queries;
  for (const auto& p : pairs) {
    entries.push_back({Keypoint3D{}, model.point.embed(p.volume)});
    ids.push_back(p.keypoint_id);
    queries.push_back({&p.patch, p.keypoint_id});
  }
  const auto recall = recall_at_k(DescriptorDB::build(entries), ids, queries, model.image, 5);
  EXPECT_EQ(recall[0], 1.0);
  EXPECT_EQ(recall[4], 1.0);
}

TEST(Recall, UntrainedModelIsNearChance) {
  Rng rng = make_rng(22);
  const ImageEmbedder image = SmallImageNet(5);
  const PointEmbedder point = SmallPointNet(6);
  std::vector<DbEntry> entries;
  std::vector<int> ids;
  for (int i = 0; i < 200; ++i) {
    entries.push_back({Keypoint3D{}, point.embed(NoiseVolume(rng, 32))});
    ids.push_back(i);
  }
  const DescriptorDB db = DescriptorDB::build(entries);
  std::vector<Patch> patches;
  std::vector<RecallQuery> queries;
  const int n = 600;
  for (int i = 0; i < n; ++i) patches.push_back(NoisePatch(rng));
  for (int i = 0; i < n; ++i) queries.push_back({&patches[static_cast<std::size_t>(i)], static_cast<int>(uniform_index(rng, 200))});
  const auto recall = recall_at_k(db, ids, queries, image, 10);
  // Binomial(600, 1/200): mean 3 hits; 4 sigma is about 6.9 hits.
  EXPECT_LE(recall[0] * n, 3.0 + 4.0 * std::sqrt(n * 0.005 * 0.995));
  for (std::size_t k = 1; k < recall.size(); ++k) EXPECT_GE(recall[k], recall[k - 1]);
}

TEST(Recall, PooledOverSubmapsAndMonotone) {
  Rng rng = make_rng(23);
  std::vector<LabeledPair> pairs;
  for (int i = 0; i < 24; ++i) {
    LabeledPair p;
    p.patch = NoisePatch(rng);
    p.volume = NoiseVolume(rng);
    p.keypoint_id = i / 2;
    p.submap = i < 12 ? 3 : 4;
    pairs.push_back(std::move(p));
  }
  const auto recall = recall_at_k(pairs, SmallImageNet(), SmallPointNet(), 8);
  ASSERT_EQ(recall.size(), 8u);
  for (std::size_t k = 1; k < recall.size(); ++k) EXPECT_GE(recall[k], recall[k - 1]);
  // Each submap holds six keypoints, so the true one is always within the top 6.
  EXPECT_EQ(recall[5], 1.0);
}

TEST(Recall, EmptyTestSetRaises) {
  EXPECT_EQ(CodeOf([] { recall_at_k(std::vector<LabeledPair>{}, SmallImageNet(), SmallPointNet(), 5); }),
            ErrorCode::kEmptyTestSet);
}

}  // namespace
}  // namespace x2d3d
