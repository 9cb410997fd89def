// Command-line front end: train / eval / predict / bench-attn / make-synth.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lcaunet/bench.hpp"
#include "lcaunet/trainer.hpp"

namespace {

using lcaunet::TrainConfig;

struct TrainArgs {
  std::string config_path, preset = "desk";
  TrainConfig v;  // staging area for flag values
  bool quiet = false;
};

// Bind every overridable field; after parsing, only the flags the user passed
// are copied onto the preset/file config.
void add_train_options(CLI::App& sub, TrainArgs& a) {
  sub.add_option("--config", a.config_path, "JSON config file");
  sub.add_option("--preset", a.preset, "base preset: desk | paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  sub.add_option("--seed", a.v.seed, "RNG seed");
  sub.add_option("--out-dir", a.v.out_dir, "output directory");
  sub.add_option("--lr", a.v.lr, "learning rate");
  sub.add_option("--weight-decay", a.v.weight_decay, "decoupled weight decay");
  sub.add_option("--batch-size", a.v.batch_size, "batch size");
  sub.add_option("--epochs", a.v.epochs, "training epochs");
  sub.add_option("--max-steps", a.v.max_steps, "stop after N optimizer steps (0 = off)");
  sub.add_option("--overfit", a.v.overfit, "train on N fixed samples, no val/augment");
  sub.add_option("--lambda-bce", a.v.lambda_bce, "BCE weight");
  sub.add_option("--lambda-dice", a.v.lambda_dice, "Dice weight");
  sub.add_option("--gamma-edge", a.v.gamma_edge, "edge-supervision weight (0 disables)");
  sub.add_option("--plateau-factor", a.v.plateau_factor, "lr reduction factor");
  sub.add_option("--plateau-patience", a.v.plateau_patience, "epochs before reduction");
  sub.add_option("--dataset", a.v.dataset, "'synthetic' or a directory of PNG pairs");
  sub.add_option("--synth-train", a.v.synth_train, "synthetic train count");
  sub.add_option("--synth-val", a.v.synth_val, "synthetic val count");
  sub.add_option("--synth-test", a.v.synth_test, "synthetic test count");
  sub.add_option("--img-size", a.v.img_size, "input resolution");
  sub.add_option("--c-body", a.v.c_body, "body-branch embed width");
  sub.add_option("--c-edge", a.v.c_edge, "edge-branch stem width");
  sub.add_option("--window", a.v.window, "attention window");
  sub.add_option("--lcaf-window", a.v.lcaf_window, "fusion attention window");
  sub.add_option("--depths", a.v.depths, "4 per-stage block counts")->expected(4);
  sub.add_option("--heads", a.v.heads, "4 per-stage head counts")->expected(4);
  sub.add_flag("--use-lcaf,!--no-lcaf", a.v.use_lcaf,
               "cross-attention fusion (off = concat+1x1)");
  sub.add_flag("--augment,!--no-augment", a.v.augment, "training augmentation");
  sub.add_flag("--quiet", a.quiet, "suppress per-epoch stdout");
}

TrainConfig resolve_config(const CLI::App& sub, const TrainArgs& a) {
  TrainConfig cfg = lcaunet::preset_config(a.preset);
  if (!a.config_path.empty()) {
    std::ifstream f(a.config_path);
    if (!f.good())
      lcaunet::fail<lcaunet::ConfigError>("cannot open config file ", a.config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      lcaunet::fail<lcaunet::ConfigError>("config file ", a.config_path, ": ",
                                          e.what());
    }
    lcaunet::apply_config_json(cfg, j);
  }
  auto passed = [&](const std::string& flag) { return sub.count(flag) > 0; };
  if (passed("--seed")) cfg.seed = a.v.seed;
  if (passed("--out-dir")) cfg.out_dir = a.v.out_dir;
  if (passed("--lr")) cfg.lr = a.v.lr;
  if (passed("--weight-decay")) cfg.weight_decay = a.v.weight_decay;
  if (passed("--batch-size")) cfg.batch_size = a.v.batch_size;
  if (passed("--epochs")) cfg.epochs = a.v.epochs;
  if (passed("--max-steps")) cfg.max_steps = a.v.max_steps;
  if (passed("--overfit")) cfg.overfit = a.v.overfit;
  if (passed("--lambda-bce")) cfg.lambda_bce = a.v.lambda_bce;
  if (passed("--lambda-dice")) cfg.lambda_dice = a.v.lambda_dice;
  if (passed("--gamma-edge")) cfg.gamma_edge = a.v.gamma_edge;
  if (passed("--plateau-factor")) cfg.plateau_factor = a.v.plateau_factor;
  if (passed("--plateau-patience")) cfg.plateau_patience = a.v.plateau_patience;
  if (passed("--dataset")) cfg.dataset = a.v.dataset;
  if (passed("--synth-train")) cfg.synth_train = a.v.synth_train;
  if (passed("--synth-val")) cfg.synth_val = a.v.synth_val;
  if (passed("--synth-test")) cfg.synth_test = a.v.synth_test;
  if (passed("--img-size")) cfg.img_size = a.v.img_size;
  if (passed("--c-body")) cfg.c_body = a.v.c_body;
  if (passed("--c-edge")) cfg.c_edge = a.v.c_edge;
  if (passed("--window")) cfg.window = a.v.window;
  if (passed("--lcaf-window")) cfg.lcaf_window = a.v.lcaf_window;
  if (passed("--depths")) cfg.depths = a.v.depths;
  if (passed("--heads")) cfg.heads = a.v.heads;
  if (passed("--use-lcaf") || passed("--no-lcaf")) cfg.use_lcaf = a.v.use_lcaf;
  if (passed("--augment") || passed("--no-augment")) cfg.augment = a.v.augment;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LCAUnet skin-lesion segmentation toolkit"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  TrainArgs targs;
  add_train_options(*train_cmd, targs);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  std::string eval_ckpt, eval_split = "test", eval_out = "eval_out", eval_dataset;
  bool eval_quiet = false;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "train | val | test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--out-dir", eval_out, "report directory");
  eval_cmd->add_option("--dataset", eval_dataset, "override the checkpoint's dataset");
  eval_cmd->add_flag("--quiet", eval_quiet, "suppress aggregate stdout line");

  auto* pred_cmd = app.add_subcommand("predict", "segment PNG images");
  std::string pred_ckpt, pred_out = "predictions";
  std::vector<std::string> pred_images;
  bool pred_edges = false;
  pred_cmd->add_option("--ckpt", pred_ckpt, "checkpoint file")->required();
  pred_cmd->add_option("images", pred_images, "input PNGs")->required();
  pred_cmd->add_option("--out-dir", pred_out, "where masks are written");
  pred_cmd->add_flag("--edges", pred_edges, "also write the four edge maps");

  auto* bench_cmd = app.add_subcommand("bench-attn", "local vs global attention cost");
  std::vector<std::int64_t> grids{14, 28, 56, 112};
  std::int64_t bench_c = 32, bench_window = 7, bench_heads = 4;
  int bench_reps = 3;
  std::string bench_csv = "bench.csv";
  bench_cmd->add_option("--grids", grids, "square token grids");
  bench_cmd->add_option("--channels", bench_c, "token width");
  bench_cmd->add_option("--window", bench_window, "local window");
  bench_cmd->add_option("--heads", bench_heads, "attention heads");
  bench_cmd->add_option("--reps", bench_reps, "timing repetitions");
  bench_cmd->add_option("--csv", bench_csv, "output table path");

  auto* synth_cmd = app.add_subcommand("make-synth", "write a synthetic PNG dataset");
  std::string synth_out;
  std::int64_t synth_count = 40, synth_size = 224;
  std::uint64_t synth_seed = 42;
  synth_cmd->add_option("--out-dir", synth_out, "target directory")->required();
  synth_cmd->add_option("--count", synth_count, "number of samples");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--size", synth_size, "image side length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are exit 1, --help is 0
  }

  try {
    if (train_cmd->parsed()) {
      TrainConfig cfg = resolve_config(*train_cmd, targs);
      auto outcome = lcaunet::train<float>(cfg, targs.quiet);
      if (!targs.quiet) {
        if (outcome.best_val_dice >= 0)
          std::cout << "best val dice: " << outcome.best_val_dice << '\n';
        if (outcome.final_train_dice >= 0)
          std::cout << "final train dice: " << outcome.final_train_dice << '\n';
        std::cout << "checkpoints: " << outcome.best_ckpt << ", "
                  << outcome.last_ckpt << '\n';
      }
    } else if (eval_cmd->parsed()) {
      lcaunet::evaluate_checkpoint<float>(eval_ckpt, eval_split, eval_out,
                                          eval_dataset, eval_quiet);
    } else if (pred_cmd->parsed()) {
      const int failures = lcaunet::predict_images<float>(pred_ckpt, pred_images,
                                                          pred_out, pred_edges);
      if (failures == static_cast<int>(pred_images.size())) {
        std::cerr << "predict: no input could be read\n";
        return 2;
      }
    } else if (bench_cmd->parsed()) {
      auto rows = lcaunet::bench_attention(grids, bench_c, bench_window, bench_reps,
                                           bench_heads);
      lcaunet::write_bench_csv(bench_csv, rows);
      std::vector<double> toks, tl, tg;
      std::printf("%6s %9s %14s %14s %12s %12s\n", "grid", "tokens", "macs_local",
                  "macs_global", "ms_local", "ms_global");
      for (const auto& r : rows) {
        std::printf("%6lld %9lld %14llu %14llu %12.3f %12.3f\n",
                    static_cast<long long>(r.grid), static_cast<long long>(r.tokens),
                    static_cast<unsigned long long>(r.measured_local),
                    static_cast<unsigned long long>(r.measured_global), r.ms_local,
                    r.ms_global);
        toks.push_back(static_cast<double>(r.tokens));
        tl.push_back(r.ms_local);
        tg.push_back(r.ms_global);
      }
      std::printf("log-log growth exponent: local %.3f, global %.3f\n",
                  lcaunet::fit_loglog_slope(toks, tl),
                  lcaunet::fit_loglog_slope(toks, tg));
      std::printf("table written to %s\n", bench_csv.c_str());
    } else if (synth_cmd->parsed()) {
      lcaunet::data::write_synth_dir(synth_out, synth_count, synth_seed, synth_size,
                                     synth_size);
      std::cout << "wrote " << synth_count << " samples to " << synth_out << '\n';
    }
  } catch (const lcaunet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
