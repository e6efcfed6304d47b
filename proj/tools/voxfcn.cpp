// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voxfcn/cli.hpp"

namespace {

struct GlobalOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<int> threads;
};

void add_global(CLI::App* app, GlobalOptions& g) {
  app->add_option("-c,--config", g.config_file, "key = value config file");
  app->add_option("-s,--set", g.overrides, "override a config key (key=value); repeatable")->allow_extra_args(false);
  app->add_option("--threads", g.threads, "worker threads (overrides runtime.threads)");
}

voxfcn::Config resolve(const GlobalOptions& g) {
  voxfcn::Config cfg;
  if (!g.config_file.empty()) voxfcn::apply_config_file(cfg, g.config_file);
  for (const auto& kv : g.overrides) voxfcn::apply_override(cfg, kv);
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  voxfcn::set_thread_count(cfg.threads);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxfcn: 3D fully convolutional vehicle detection on lidar voxel grids"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  add_global(&app, g);

  auto* config_cmd = app.add_subcommand("config", "print the effective configuration with documentation");

  std::string synth_out;
  std::size_t synth_count = 10;
  auto* synth = app.add_subcommand("synth", "generate a synthetic KITTI-format dataset");
  synth->add_option("out_dir", synth_out, "output dataset directory")->required();
  synth->add_option("-n,--count", synth_count, "number of scenes");

  std::string train_data, train_ckpt, train_history;
  auto* train = app.add_subcommand("train", "train the network on a dataset");
  train->add_option("data_dir", train_data, "dataset directory")->required();
  train->add_option("checkpoint", train_ckpt, "checkpoint output path")->required();
  train->add_option("--history", train_history, "loss-history output (paths.loss_history)");

  std::string det_ckpt, det_data, det_out, det_cands;
  auto* det = app.add_subcommand("detect", "run detection over a dataset");
  det->add_option("checkpoint", det_ckpt, "trained checkpoint")->required();
  det->add_option("data_dir", det_data, "dataset directory")->required();
  det->add_option("-o,--out", det_out, "detection file")->required();
  det->add_option("--dump-candidates", det_cands, "also write pre-suppression candidates here");

  std::string ev_dets, ev_gt, ev_pr;
  auto* ev = app.add_subcommand("eval", "score detections against ground truth");
  ev->add_option("detections", ev_dets, "detection file")->required();
  ev->add_option("gt_dir", ev_gt, "ground-truth dataset directory")->required();
  ev->add_option("--pr-out", ev_pr, "write precision/recall dump (paths.pr_out)");

  std::uint64_t gc_seed = 1;
  double gc_corrupt = 0.0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  gc->add_option("--seed", gc_seed, "random seed");
  gc->add_option("--corrupt-gradient", gc_corrupt, "scale analytic gradients by (1 + x); test hook")
      ->group("");

  for (auto* sub : app.get_subcommands({}))
    sub->footer("Global options -c, -s and --threads are accepted before or after the command.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? voxfcn::kExitOk : voxfcn::kExitUsage;
  }

  voxfcn::Config cfg;
  try {
    if (train->parsed() && !train_history.empty()) g.overrides.push_back("paths.loss_history=" + train_history);
    if (ev->parsed() && !ev_pr.empty()) g.overrides.push_back("paths.pr_out=" + ev_pr);
    cfg = resolve(g);
  } catch (const voxfcn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return voxfcn::kExitUsage;
  }

  try {
    if (config_cmd->parsed()) {
      std::cout << voxfcn::format_config(cfg);
      return voxfcn::kExitOk;
    }
    if (synth->parsed()) return voxfcn::cmd_synth(cfg, synth_out, synth_count, std::cerr);
    if (train->parsed()) return voxfcn::cmd_train(cfg, train_data, train_ckpt, std::cerr);
    if (det->parsed()) {
      std::optional<std::filesystem::path> cands;
      if (!det_cands.empty()) cands = det_cands;
      return voxfcn::cmd_detect(cfg, det_ckpt, det_data, det_out, cands, std::cerr);
    }
    if (ev->parsed()) return voxfcn::cmd_eval(cfg, ev_dets, ev_gt, std::cout, std::cerr);
    if (gc->parsed()) return voxfcn::cmd_gradcheck(cfg, gc_seed, std::cout, gc_corrupt);
  } catch (const voxfcn::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return voxfcn::kExitUsage;
  } catch (const voxfcn::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return voxfcn::kExitNumerical;
  } catch (const voxfcn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return voxfcn::kExitData;
  }
  return voxfcn::kExitUsage;
}
