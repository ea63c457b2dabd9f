// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "pnp_problems.hpp"
#include "x2d3d/embed/gradcheck.hpp"
#include "x2d3d/pipeline/commands.hpp"

using namespace x2d3d;
using namespace x2d3d::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// 1 -------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckConfig cfg;
  cfg.step = 1e-5;
  const GradcheckResult r = gradient_check(cfg, 10);
  const double t = seconds_since(t0);
  return {r.max_rel_error <= 1e-4 && t < 60.0,
          format("max rel error %.3g over %zu entries, 10 triplets, h=1e-5, %.1f s", r.max_rel_error, r.entries, t)};
}

// 2 -------------------------------------------------------------------------

Outcome loss_anchors() {
  const double equal = triplet_loss_from_distances(0.8, 0.8, 5.0);
  const double margin = triplet_loss_from_distances(0.0, 1.0, 5.0);
  const double e1 = std::abs(equal - std::log(2.0)), e2 = std::abs(margin - std::log1p(std::exp(-5.0)));
  return {e1 <= 1e-9 && e2 <= 1e-9, format("|L(d,d) - ln 2| = %.2g, |L(0,1) - ln(1+e^-5)| = %.2g", e1, e2)};
}

// 3 -------------------------------------------------------------------------

Outcome epnp_accuracy() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(31);
  double worst_r = 0, worst_t = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 4 + static_cast<int>(uniform_index(rng, 47));
    const auto p = RandomPnpProblem(rng, n, 2, 50);
    const PoseSE3 est = epnp(p.corrs, TestCamera());
    worst_r = std::max(worst_r, rotation_error_deg(est.rotation(), p.pose.rotation()));
    worst_t = std::max(worst_t, translation_error_m(est, p.pose));
  }
  std::vector<double> rot, trans;
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = RandomPnpProblem(rng, 20, 2, 50, 0.5);
    const PoseSE3 est = epnp(p.corrs, TestCamera());
    rot.push_back(rotation_error_deg(est.rotation(), p.pose.rotation()));
    trans.push_back(translation_error_m(est, p.pose));
  }
  std::sort(rot.begin(), rot.end());
  std::sort(trans.begin(), trans.end());
  const double med_r = 0.5 * (rot[99] + rot[100]), med_t = 0.5 * (trans[99] + trans[100]);
  const double t = seconds_since(t0);
  return {worst_r <= 0.01 && worst_t <= 1e-4 && med_r <= 0.5 && med_t <= 0.05 && t < 60.0,
          format("noise-free worst %.2g deg / %.2g m; 0.5 px median %.3g deg / %.3g m; %.1f s", worst_r, worst_t, med_r, med_t,
                 t)};
}

// 4 -------------------------------------------------------------------------

Outcome ransac_robustness() {
  RansacConfig cfg;
  cfg.max_iterations = 100000;
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng = make_rng(4000 + static_cast<std::uint64_t>(trial));
    const auto p = RandomRansacProblem(rng, 40, 40, 5);
    cfg.seed = static_cast<std::uint64_t>(trial);
    const auto r = ransac_pnp(p.hyps, TestCamera(), cfg);
    if (!std::holds_alternative<PoseEstimate>(r)) continue;
    const auto& est = std::get<PoseEstimate>(r);
    const std::set<std::size_t> inl(est.inliers.begin(), est.inliers.end());
    const bool all_true = std::all_of(p.true_hyps.begin(), p.true_hyps.end(), [&](std::size_t h) { return inl.count(h) > 0; });
    if (all_true && rotation_error_deg(est.pose.rotation(), p.pose.rotation()) <= 0.1 && translation_error_m(est.pose, p.pose) <= 0.01) {
      ++ok;
    }
  }
  return {ok >= 99, format("%d/100 trials (40 true + 40 decoy keypoints, K=5) within 0.1 deg / 0.01 m with all true inliers", ok)};
}

// 5 -------------------------------------------------------------------------

Outcome oracle_equivalence() {
  int iss_ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng = make_rng(500 + static_cast<std::uint64_t>(trial));
    PointCloud c;
    const int n = 200 + static_cast<int>(uniform_index(rng, 301));
    for (int i = 0; i < n; ++i) {
      if (i % 3 == 0) {
        c.points.emplace_back(uniform(rng, 0, 3), uniform(rng, 0, 3), uniform(rng, 0, 3));
      } else if (i % 3 == 1) {
        c.points.emplace_back(uniform(rng, 0, 3), uniform(rng, 0, 3), 0.0);
      } else {
        c.points.emplace_back(0.0, uniform(rng, 0, 3), uniform(rng, 0, 3));
      }
    }
    const auto kps = detect_iss(c);
    const auto oracle = BruteForceIss(c.points, IssParams{});
    std::vector<std::size_t> got;
    for (const auto& k : kps) got.push_back(static_cast<std::size_t>(std::find(c.points.begin(), c.points.end(), k.position) - c.points.begin()));
    std::sort(got.begin(), got.end());
    bool same = got.size() == oracle.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i] == oracle[i].index;
    iss_ok += same;
  }
  int knn_ok = 0;
  const int dims[] = {64, 128, 256};
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng = make_rng(600 + static_cast<std::uint64_t>(trial));
    const int dim = dims[trial % 3];
    const int n = 1000 + static_cast<int>(uniform_index(rng, 9001));
    std::vector<DbEntry> entries;
    auto unit = [&] {
      Descriptor d;
      d.values = Eigen::VectorXd::NullaryExpr(dim, [&] { return gaussian(rng); }).normalized();
      return d;
    };
    for (int i = 0; i < n; ++i) entries.push_back({Keypoint3D{}, unit()});
    const DescriptorDB db = DescriptorDB::build(entries);
    bool same = true;
    for (int q = 0; q < 10 && same; ++q) {
      const Descriptor query = unit();
      const auto expect = BruteForce(entries, query, 5);
      const auto got = db.knn(query, 5);
      same = got.size() == expect.size();
      for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i].entry == expect[i].second;
    }
    knn_ok += same;
  }
  return {iss_ok == 20 && knn_ok == 20, format("ISS %d/20 clouds, kNN %d/20 databases identical to brute force", iss_ok, knn_ok)};
}

// 6 -------------------------------------------------------------------------

Outcome descriptor_contracts() {
  const ImageEmbedder g(ImageNetConfig{kPatchSide, {4, 8, 16}, 32, 128}, 61);
  const PointEmbedder f(PointNetConfig{{16, 32, 64}, 64, 128}, 62);
  Rng rng = make_rng(63);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    GrayImage raw(32, 32);
    for (auto& v : raw.data) v = uniform(rng, 0, 1);
    worst = std::max(worst, std::abs(g.embed(preprocess_patch(raw)).values.norm() - 1.0));
    LocalVolume v;
    for (int j = 0; j < 128; ++j) v.points.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    v.original_count = 128;
    worst = std::max(worst, std::abs(f.embed(v).values.norm() - 1.0));
  }
  LocalVolume v;
  for (int j = 0; j < 1024; ++j) v.points.emplace_back(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  v.original_count = 1024;
  const Eigen::VectorXd base = f.embed(v).values;
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    std::shuffle(v.points.begin(), v.points.end(), rng);
    exact += f.embed(v).values == base;
  }
  return {worst <= 1e-6 && exact == 100, format("worst | |d| - 1 | = %.2g over 2000 embeds; %d/100 shuffles bit-identical", worst, exact)};
}

// Pipeline helpers ----------------------------------------------------------

struct Run {
  RunPaths paths;
  SynthSummary synth;
  TrainingSummary training;
  std::vector<double> recall;
  EvalReport report;
  double train_minutes = 0.0;
};

Run full_pipeline(const PipelineConfig& cfg, const fs::path& dir, std::ostream& log) {
  fs::remove_all(dir);
  Run r{RunPaths{dir}, {}, {}, {}, {}, 0.0};
  const CommandOptions opt{&log, std::nullopt};
  r.synth = run_synth(cfg, r.paths, opt);
  const auto t0 = std::chrono::steady_clock::now();
  r.training = run_train(cfg, r.paths, opt);
  r.train_minutes = seconds_since(t0) / 60.0;
  r.recall = run_recall(cfg, r.paths, opt);
  run_embed_map(cfg, r.paths, opt);
  run_localize(cfg, r.paths, opt);
  r.report = run_eval(cfg, r.paths, opt);
  return r;
}

// 7 -------------------------------------------------------------------------

struct EndToEnd {
  std::optional<Run> run;
  Outcome outcome;
};

EndToEnd end_to_end(const PipelineConfig& cfg, const fs::path& work, std::ostream& log) {
  EndToEnd out;
  out.run = full_pipeline(cfg, work / "e2e", log);
  const Run& r = *out.run;

  // Negative control: the same query frames against databases built from a
  // different scene with the same model.
  PipelineConfig other = cfg;
  other.scene.seed = cfg.scene.seed + 1000;
  const RunPaths neg{work / "e2e_other_scene"};
  fs::remove_all(neg.root);
  const CommandOptions opt{&log, std::nullopt};
  run_synth(other, neg, opt);
  fs::create_directories(neg.model());
  fs::copy_file(r.paths.checkpoint(), neg.checkpoint());
  run_embed_map(other, neg, opt);
  const RunPaths query{work / "e2e_cross_query"};
  fs::remove_all(query.root);
  fs::create_directories(query.root);
  fs::copy(r.paths.dataset(), query.dataset(), fs::copy_options::recursive);
  fs::copy(r.paths.model(), query.model(), fs::copy_options::recursive);
  run_localize(cfg, query, CommandOptions{&log, neg.db()});
  const EvalReport cross = run_eval(cfg, query, opt);

  const bool a = std::abs(r.training.initial_loss - std::log(2.0)) < 0.05 && r.training.final_loss < 0.4;
  const bool monotone = std::is_sorted(r.recall.begin(), r.recall.end());
  const double r5 = r.recall.size() >= 5 ? r.recall[4] : 0.0;
  const bool b = r5 >= 0.5 && monotone;
  const bool c = r.report.success_ratio >= 0.4;
  const bool d = cross.success_ratio < 0.05;
  std::string detail =
      format("(a) loss %.3f -> %.3f %s; (b) recall@5 %.3f%s %s; (c) %zu/%zu frames within (10 m, 45 deg) = %.3f %s; "
             "(d) cross-scene %zu/%zu = %.3f %s; training %.1f min on %zu pairs over %zu keypoints",
             r.training.initial_loss, r.training.final_loss, a ? "ok" : "FAIL", r5, monotone ? ", monotone" : ", NOT monotone",
             b ? "ok" : "FAIL", r.report.successes, r.report.frames, r.report.success_ratio, c ? "ok" : "FAIL", cross.successes,
             cross.frames, cross.success_ratio, d ? "ok" : "FAIL", r.train_minutes, r.training.pairs, r.training.keypoints);
  out.outcome = {a && b && c && d && r.train_minutes <= 30.0, detail};
  return out;
}

// 8 -------------------------------------------------------------------------

Outcome determinism(const PipelineConfig& cfg, const fs::path& work, std::ostream& log) {
  const Run a = full_pipeline(cfg, work / "det_a", log);
  const Run b = full_pipeline(cfg, work / "det_b", log);
  std::vector<std::pair<fs::path, fs::path>> files{{a.paths.report_json(), b.paths.report_json()},
                                                   {a.paths.checkpoint(), b.paths.checkpoint()}};
  for (const auto& e : fs::directory_iterator(a.paths.db())) {
    if (e.path().extension() == ".db") files.emplace_back(e.path(), b.paths.db() / e.path().filename());
  }
  std::size_t same = 0, dbs = 0;
  for (const auto& [x, y] : files) {
    dbs += x.extension() == ".db";
    same += fs::exists(y) && slurp(x) == slurp(y) && !slurp(x).empty();
  }
  return {same == files.size() && dbs > 0,
          format("%zu/%zu files byte-identical (report.json, checkpoint, %zu DB files)", same, files.size(), dbs)};
}

// 9 -------------------------------------------------------------------------

std::vector<std::string> audit_pairs(const RunPaths& paths, const PipelineConfig& cfg, std::size_t& audited) {
  std::vector<std::string> violations;
  auto violate = [&](std::size_t i, const std::string& what) {
    if (violations.size() < 10) violations.push_back(paths.root.filename().string() + " pair " + std::to_string(i) + ": " + what);
  };
  const auto trajectory = io::read_trajectory(paths.trajectory());
  std::map<int, Point3> origin;
  for (const auto& rec : io::read_submaps(paths.submaps())) origin[rec.id] = rec.origin;
  const auto records = io::read_pairs(paths.pairs());
  std::map<int, Point3> kp_position;
  std::map<int, int> kp_submap;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LabeledPair& p = records[i].pair;
    Submap sm;
    sm.origin = origin.at(p.submap);
    const auto px = project(p.keypoint3d.position, sm.local_pose(trajectory.at(static_cast<std::size_t>(p.frame)).pose),
                            cfg.scene.intrinsics);
    if (!px || (*px - p.keypoint2d.position).norm() > 3.0) violate(i, "reprojection residual above 3 px");
    if (p.support_views < 3) violate(i, "fewer than 3 supporting views");
    if (p.volume.original_count < 100) violate(i, "volume has fewer than 100 points");
    if (p.volume.points.size() != 1024) violate(i, "volume not padded to 1024 points");
    if (std::any_of(p.volume.points.begin(), p.volume.points.end(), [](const Point3& q) { return q.norm() > 1.0 + 1e-6; })) {
      violate(i, "volume point outside the unit sphere");
    }
    if (p.keypoint2d.scale > 4.0) violate(i, "2D keypoint scale above 4");
    const GrayImage raw = io::read_patch_pgm(paths.pairs() / (io::pair_stem(i) + ".pgm"));
    double mean = 0.0;
    for (double v : raw.data) mean += v / static_cast<double>(raw.data.size());
    if (raw.width != 128 || raw.height != 128) violate(i, "patch is not 128x128");
    if (std::abs(mean) > 1e-4) violate(i, format("patch mean %.2g is not zero", mean));
    const auto [it, fresh] = kp_position.emplace(p.keypoint_id, p.keypoint3d.position);
    if (!fresh && it->second != p.keypoint3d.position) violate(i, "keypoint id maps to two positions");
    kp_submap[p.keypoint_id] = p.submap;
    for (std::size_t j = 0; j < i; ++j) {
      const LabeledPair& q = records[j].pair;
      if (q.frame == p.frame && (q.keypoint2d.position - p.keypoint2d.position).norm() <= 32.0) {
        violate(i, "within 32 px of pair " + std::to_string(j) + " in the same frame");
      }
    }
  }
  for (const auto& [id, pos] : kp_position) {
    for (const auto& [id2, pos2] : kp_position) {
      if (id2 > id && kp_submap[id] == kp_submap[id2] && (pos - pos2).norm() <= 4.0) {
        violate(0, "keypoints " + std::to_string(id) + " and " + std::to_string(id2) + " closer than 4 m");
      }
    }
  }
  audited += records.size();
  return violations;
}

Outcome dataset_fidelity(const std::vector<std::pair<RunPaths, PipelineConfig>>& runs) {
  std::size_t audited = 0;
  std::vector<std::string> violations;
  for (const auto& [paths, cfg] : runs) {
    if (!fs::exists(paths.pairs() / "index.csv")) continue;
    for (auto& v : audit_pairs(paths, cfg, audited)) violations.push_back(std::move(v));
  }
  std::string detail = format("%zu pairs audited over %zu runs, %zu violations", audited, runs.size(), violations.size());
  for (const auto& v : violations) detail += "\n      " + v;
  return {violations.empty() && audited > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-9"};
  std::string work = (fs::temp_directory_path() / "x2d3d_acceptance").string();
  std::string source = X2D3D_SOURCE_DIR;
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory for pipeline runs");
  app.add_option("--source-dir", source, "project root holding configs/");
  app.add_option("--only", only, "criteria to run (default: all)");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  std::ofstream log(fs::path(work) / "pipeline.log");
  auto selected = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& f) {
    if (!selected(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << format("criterion %d %-28s %s  [%.1f s] ", n, name, o.pass ? "PASS" : "FAIL", seconds_since(t0)) << o.detail
              << std::endl;
  };

  const PipelineConfig e2e_cfg = load_config(fs::path(source) / "configs" / "e2e.toml");
  const PipelineConfig det_cfg = load_config(fs::path(source) / "configs" / "determinism.toml");

  report(1, "gradient-correctness", gradient_correctness);
  report(2, "loss-anchor-values", loss_anchors);
  report(3, "epnp-accuracy", epnp_accuracy);
  report(4, "ransac-robustness", ransac_robustness);
  report(5, "oracle-equivalence", oracle_equivalence);
  report(6, "descriptor-contracts", descriptor_contracts);
  report(7, "end-to-end-localization", [&] { return end_to_end(e2e_cfg, work, log).outcome; });
  report(8, "determinism", [&] { return determinism(det_cfg, work, log); });
  report(9, "dataset-rule-fidelity", [&] {
    return dataset_fidelity({{RunPaths{fs::path(work) / "e2e"}, e2e_cfg},
                             {RunPaths{fs::path(work) / "e2e_other_scene"}, e2e_cfg},
                             {RunPaths{fs::path(work) / "det_a"}, det_cfg}});
  });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
