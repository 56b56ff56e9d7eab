// relpose: train / eval / ablate / synth / report for relative camera pose
// regression on desk-scale data.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "relpose/config.hpp"
#include "relpose/data.hpp"
#include "relpose/error.hpp"
#include "relpose/pipeline.hpp"
#include "relpose/report.hpp"
#include "relpose/train.hpp"

namespace fs = std::filesystem;
using namespace relpose;

namespace {

struct TrainArtifacts {
  net::Model<float> model;
  TrainResult result;
  data::SplitResult splits;
};

TrainArtifacts run_training(const RunConfig& cfg, const std::string& out_dir) {
  validate_paths(cfg);
  fs::create_directories(out_dir);

  auto records = data::load_pairs(cfg.manifest, cfg.convention, cfg.swap_pairs);
  auto splits = data::split(records, cfg.split_ratios, cfg.split_seed);
  if (splits.train.empty())
    throw EmptyDataset("train split is empty; adjust data.split");

  TrainArtifacts art;
  art.model.init(cfg.model, cfg.seed);

  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.lr0 = cfg.lr;
  opts.batch = cfg.batch;
  opts.step_size = cfg.step_size;
  opts.gamma = cfg.gamma;
  opts.seed = cfg.seed;
  opts.resume = cfg.resume;
  opts.log_path = (fs::path(out_dir) / "training_log.csv").string();
  opts.out_best = (fs::path(out_dir) / "checkpoint_best.rpck").string();
  opts.out_last = (fs::path(out_dir) / "checkpoint_last.rpck").string();

  art.result = train_model(art.model, splits.train, splits.val, opts);
  art.splits = std::move(splits);
  std::printf("trained %d epochs; best epoch %d (val loss %.6g); "
              "skipped direction pairs: %lld\n",
              cfg.epochs, art.result.best_epoch, art.result.best_val,
              art.result.skipped_direction_pairs);
  return art;
}

int cmd_train(const std::string& config_path) {
  const RunConfig cfg = parse_run_config(config_path);
  run_training(cfg, cfg.out_dir);
  std::printf("checkpoints and training_log.csv written to %s\n",
              cfg.out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& pairs,
             bool scale_align, const std::string& scale_mode, bool pooled,
             bool dump_matches, const std::string& out_dir,
             const std::string& config_path) {
  const auto entries = load_rpck(checkpoint);
  const net::ModelConfig stored = net::Model<float>::config_from_entries(entries);
  if (!config_path.empty()) {
    const RunConfig cfg = parse_run_config(config_path);
    if (cfg.model.extractor.channels != stored.extractor.channels ||
        cfg.model.extractor.layers != stored.extractor.layers ||
        cfg.model.extractor.heads != stored.extractor.heads ||
        cfg.model.regressor.hidden != stored.regressor.hidden)
      throw CheckpointMismatch("checkpoint architecture disagrees with " +
                               config_path);
  }
  net::Model<float> model;
  model.init(stored, 0);
  model.load_entries(entries);

  auto records = data::load_pairs(pairs);
  report::EvalOptions opts;
  opts.scale_align = scale_align;
  opts.scale_mode = scale_mode == "median" ? geo::ScaleMode::kMedian
                                           : geo::ScaleMode::kLeastSquares;
  opts.pooled_average = pooled;
  if (dump_matches)
    opts.dump_matches_dir = (fs::path(out_dir) / "matches").string();
  const auto rep = report::evaluate(model, records, opts);
  report::write_eval_outputs(rep, out_dir);
  std::printf("%zu pairs (%d skipped); average rot %.4f deg, trans %.4f m; "
              "reports in %s\n",
              rep.errors.size(), rep.skipped, rep.avg_rot_deg, rep.avg_trans_m,
              out_dir.c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& variant) {
  RunConfig cfg = parse_run_config(config_path);
  cfg.model.variant = net::parse_variant(variant);
  const std::string out_dir =
      (fs::path(cfg.out_dir) / net::variant_name(cfg.model.variant)).string();
  auto art = run_training(cfg, out_dir);

  const auto& eval_set =
      !art.splits.test.empty() ? art.splits.test
      : (!art.splits.val.empty() ? art.splits.val : art.splits.train);
  net::Model<float> best;
  best.init(cfg.model, cfg.seed);
  if (!art.result.best_entries.empty())
    best.load_entries(art.result.best_entries);
  const auto rep = report::evaluate(best, eval_set);
  report::write_eval_outputs(rep, out_dir);
  std::printf("variant %s: average rot %.4f deg, trans %.4f m; reports in "
              "%s\n",
              variant.c_str(), rep.avg_rot_deg, rep.avg_trans_m,
              out_dir.c_str());
  return 0;
}

int cmd_synth(std::uint64_t seed, int pairs, const std::string& out_dir,
              int points, int image_size, double baseline_min,
              double baseline_max, double rot_min, double rot_max, bool png) {
  data::SynthConfig cfg;
  cfg.seed = seed;
  cfg.n_pairs = pairs;
  cfg.n_points = points;
  cfg.image_size = image_size;
  cfg.baseline_min = baseline_min;
  cfg.baseline_max = baseline_max;
  cfg.rot_min_deg = rot_min;
  cfg.rot_max_deg = rot_max;
  const auto scene = data::synth_scene(cfg);
  const std::string manifest = data::write_synth_dataset(scene, out_dir, png);
  std::size_t n_corr = 0;
  for (const auto& c : scene.correspondences) n_corr += c.size();
  std::printf("wrote %d pairs (%zu gt correspondences) under %s\n", pairs,
              n_corr, manifest.c_str());
  return 0;
}

int cmd_report(const std::string& errors_csv, const std::string& out_dir,
               double cutoff_deg, double bin_width, double bin_width_t) {
  report::report_from_errors_csv(errors_csv, out_dir, cutoff_deg, bin_width,
                                 bin_width_t);
  std::printf("CDF and histogram files written to %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relative camera pose regression toolkit"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, pairs, errors_csv, variant;
  std::string out_dir = "eval_out";
  std::string scale_mode = "ls";
  bool scale_align = false, pooled = false, png = false, dump_matches = false;
  std::uint64_t seed = 0;
  int n_pairs = 8, points = 256, image_size = 64;
  double baseline_min = 0.10, baseline_max = 0.35;
  double rot_min = 2.0, rot_max = 20.0;
  double cutoff_deg = 0.0, bin_width = 1.0, bin_width_t = 0.01;

  auto* train_cmd = app.add_subcommand("train", "train from a config file");
  train_cmd->add_option("--config", config_path, "run configuration file")
      ->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "RPCK checkpoint")
      ->required();
  eval_cmd->add_option("--pairs", pairs, "pair manifest")->required();
  eval_cmd->add_flag("--scale-align", scale_align,
                     "optimize a per-scene global scale before the "
                     "translation error");
  eval_cmd->add_option("--scale-mode", scale_mode,
                       "ls (least squares) or median");
  eval_cmd->add_flag("--pooled", pooled,
                     "pool all pairs for the average instead of averaging "
                     "scene medians");
  eval_cmd->add_flag("--dump-matches", dump_matches,
                     "write per-pair correspondence CSVs");
  eval_cmd->add_option("--out", out_dir, "output directory");
  eval_cmd->add_option("--config", config_path,
                       "optional config cross-checked against the checkpoint");

  auto* ablate_cmd = app.add_subcommand("ablate", "train+eval a variant");
  ablate_cmd->add_option("--config", config_path, "run configuration file")
      ->required();
  ablate_cmd->add_option("--variant", variant,
                         "full|no_warp|cnn_only|self_attn_only")
      ->required();

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic scene");
  synth_cmd->add_option("--seed", seed, "RNG seed")->required();
  synth_cmd->add_option("--pairs", n_pairs, "number of image pairs")
      ->required();
  synth_cmd->add_option("--out", out_dir, "output directory")->required();
  synth_cmd->add_option("--points", points, "points in the cloud");
  synth_cmd->add_option("--image-size", image_size, "square image size");
  synth_cmd->add_option("--baseline-min", baseline_min, "meters");
  synth_cmd->add_option("--baseline-max", baseline_max, "meters");
  synth_cmd->add_option("--rot-min", rot_min, "degrees");
  synth_cmd->add_option("--rot-max", rot_max, "degrees");
  synth_cmd->add_flag("--png", png, "also write PNG previews");

  auto* report_cmd =
      app.add_subcommand("report", "CDF/histograms from an errors.csv");
  report_cmd->add_option("--errors", errors_csv, "errors.csv from eval")
      ->required();
  report_cmd->add_option("--cutoff-deg", cutoff_deg,
                         "truncate the rotation axis");
  report_cmd->add_option("--bin-width", bin_width,
                         "rotation histogram bin width (deg)");
  report_cmd->add_option("--bin-width-t", bin_width_t,
                         "translation histogram bin width (m)");
  report_cmd->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path);
    if (eval_cmd->parsed())
      return cmd_eval(checkpoint, pairs, scale_align, scale_mode, pooled,
                      dump_matches, out_dir, config_path);
    if (ablate_cmd->parsed()) return cmd_ablate(config_path, variant);
    if (synth_cmd->parsed())
      return cmd_synth(seed, n_pairs, out_dir, points, image_size,
                       baseline_min, baseline_max, rot_min, rot_max, png);
    if (report_cmd->parsed())
      return cmd_report(errors_csv, out_dir, cutoff_deg, bin_width,
                        bin_width_t);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";  // "<Category>: <detail>"
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "InternalError: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
