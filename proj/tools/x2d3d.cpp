// Command-line front end: synth, train, embed-map, localize, recall, eval, gradcheck.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "x2d3d/pipeline/commands.hpp"

using namespace x2d3d;

int main(int argc, char** argv) {
  CLI::App app{"2D-3D cross-modal visual localization toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  app.add_option("--config", config_path, "TOML configuration file");
  app.add_option("--seed", seed, "seed for scene, labeling, training and RANSAC");
  app.add_option("--out-dir", out_dir, "run directory");

  auto* synth = app.add_subcommand("synth", "generate scene, images, submaps and labeled pairs");
  auto* train = app.add_subcommand("train", "train both embedding branches on the train split");
  auto* embed = app.add_subcommand("embed-map", "build descriptor databases for the test submaps");
  auto* localize = app.add_subcommand("localize", "localize the test frames");
  std::string db_dir;
  localize->add_option("--db-dir", db_dir, "use databases from another run");
  auto* eval = app.add_subcommand("eval", "score localization results and write reports");
  auto* recall = app.add_subcommand("recall", "retrieval recall@k on the test pairs");
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numerical gradients");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (seed) apply_seed(cfg, *seed);
    cfg.validate();
    const RunPaths paths{out_dir};
    CommandOptions opt;
    if (!db_dir.empty()) opt.db_dir = db_dir;

    if (synth->parsed()) {
      const SynthSummary s = run_synth(cfg, paths, opt);
      if (s.pairs == 0) std::cerr << "warning: no labeled pairs were produced\n";
    } else if (train->parsed()) {
      run_train(cfg, paths, opt);
    } else if (embed->parsed()) {
      run_embed_map(cfg, paths, opt);
    } else if (localize->parsed()) {
      run_localize(cfg, paths, opt);
    } else if (recall->parsed()) {
      run_recall(cfg, paths, opt);
    } else if (eval->parsed()) {
      const EvalReport rep = run_eval(cfg, paths, opt);
      std::cout << report_text(rep, std::nullopt);
      if (rep.successes == 0) return kExitNoSuccess;
    } else if (gradcheck->parsed()) {
      const GradcheckResult res = run_gradcheck(cfg, paths, opt);
      if (!(res.max_rel_error <= 1e-4)) return kExitFailure;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
