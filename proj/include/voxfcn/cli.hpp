// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Operator entry points: flat key = value configuration and the five
// subcommands (synth, train, detect, eval, gradcheck). Each cmd_* returns a
// process exit code: 0 ok, 1 usage/config, 2 data/checkpoint, 3 numerical.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"
#include "voxfcn/eval.hpp"
#include "voxfcn/fcn3d.hpp"
#include "voxfcn/gradcheck.hpp"
#include "voxfcn/inference.hpp"
#include "voxfcn/io_kitti.hpp"
#include "voxfcn/synth.hpp"
#include "voxfcn/voxel.hpp"

namespace voxfcn {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

struct Config {
  GridSpec grid;  // KITTI-scale default; configs/synthetic.cfg switches to the small grid
  ArchConfig arch;
  TrainConfig train;
  double sphere_radius_fraction = 0.25;
  InferenceConfig inference;
  double eval_iou_threshold = 0.7;
  DifficultyRules eval_rules;
  SceneSpec synth;  // synth.grid is ignored; scenes are placed inside `grid`
  std::string loss_history;  // empty: <checkpoint>.loss.txt
  std::string pr_out;        // empty: no PR dump
  int threads = 1;
  double gradcheck_step = 1e-3;
  double gradcheck_threshold = 1e-3;
  std::size_t gradcheck_coords = 64;

  SceneSpec scene_spec() const {
    SceneSpec s = synth;
    s.grid = grid;
    return s;
  }

  void validate() const {
    grid.validate();
    arch.validate();
    train.validate();
    inference.validate();
    scene_spec().validate();
    if (!(sphere_radius_fraction > 0)) throw ConfigError("target.sphere_radius_fraction must be > 0");
    if (!(eval_iou_threshold > 0) || eval_iou_threshold > 1) throw ConfigError("eval.iou_threshold must be in (0, 1]");
    if (threads < 1) throw ConfigError("runtime.threads must be >= 1");
    if (!(gradcheck_step > 0) || !(gradcheck_threshold > 0)) throw ConfigError("gradcheck step/threshold must be > 0");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return n;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream ss(v);
  for (std::string tok; std::getline(ss, tok, ',');) out.push_back(trim(tok));
  return out;
}

template <typename T, std::size_t N, typename Conv>
std::array<T, N> to_array(const std::string& key, const std::string& v, Conv conv) {
  const auto parts = split_list(v);
  if (parts.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated values");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<T>(conv(key, parts[i]));
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

template <typename A>
std::string fmt_list(const A& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + fmt(static_cast<double>(a[i]));
  return s;
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const auto n = to_int(key, v);
  if (n < 0) throw ConfigError(key + ": must be non-negative");
  return static_cast<std::size_t>(n);
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  auto dbl = [](const char* name, const char* doc, auto member) {
    return ConfigKey{name, doc, [=](Config& c, const std::string& v) { member(c) = to_double(name, v); },
                     [=](const Config& c) { return fmt(member(const_cast<Config&>(c))); }};
  };
  auto integer = [](const char* name, const char* doc, auto member) {
    return ConfigKey{name, doc,
                     [=](Config& c, const std::string& v) {
                       using M = std::remove_reference_t<decltype(member(c))>;
                       const auto n = to_int(name, v);
                       if (std::is_unsigned_v<M> && n < 0) throw ConfigError(std::string(name) + ": must be non-negative");
                       member(c) = static_cast<M>(n);
                     },
                     [=](const Config& c) { return std::to_string(member(const_cast<Config&>(c))); }};
  };
  auto boolean = [](const char* name, const char* doc, auto member) {
    return ConfigKey{name, doc,
                     [=](Config& c, const std::string& v) {
                       if (v == "true" || v == "1") {
                         member(c) = true;
                       } else if (v == "false" || v == "0") {
                         member(c) = false;
                       } else {
                         throw ConfigError(std::string(name) + ": expected true or false, got '" + v + "'");
                       }
                     },
                     [=](const Config& c) { return std::string(member(const_cast<Config&>(c)) ? "true" : "false"); }};
  };
  auto range = [](const char* name, const char* doc, auto member) {
    return ConfigKey{name, doc,
                     [=](Config& c, const std::string& v) {
                       const auto a = to_array<double, 2>(name, v, to_double);
                       member(c) = Range{a[0], a[1]};
                     },
                     [=](const Config& c) {
                       const Range& r = member(const_cast<Config&>(c));
                       return fmt(r.lo) + "," + fmt(r.hi);
                     }};
  };
  auto str = [](const char* name, const char* doc, auto member) {
    return ConfigKey{name, doc, [=](Config& c, const std::string& v) { member(c) = v; },
                     [=](const Config& c) { return member(const_cast<Config&>(c)); }};
  };
  static const std::vector<ConfigKey> keys = {
      {"grid.origin", "grid corner (x,y,z) in meters, sensor frame",
       [](Config& c, const std::string& v) { c.grid.origin = to_array<double, 3>("grid.origin", v, to_double); },
       [](const Config& c) { return fmt_list(c.grid.origin); }},
      dbl("grid.voxel_size", "voxel edge length in meters", [](Config& c) -> double& { return c.grid.voxel_size; }),
      {"grid.dims", "cells along x,y,z; each a multiple of 8",
       [](Config& c, const std::string& v) { c.grid.dims = to_array<std::size_t, 3>("grid.dims", v, to_count); },
       [](const Config& c) { return fmt_list(c.grid.dims); }},
      {"arch.channels", "conv1,conv2,conv3 output channels",
       [](Config& c, const std::string& v) { c.arch.channels = to_array<std::size_t, 3>("arch.channels", v, to_count); },
       [](const Config& c) { return fmt_list(c.arch.channels); }},
      {"arch.kernels", "conv1,conv2,conv3 kernel sizes (odd)",
       [](Config& c, const std::string& v) { c.arch.kernels = to_array<std::size_t, 3>("arch.kernels", v, to_count); },
       [](const Config& c) { return fmt_list(c.arch.kernels); }},
      dbl("target.sphere_radius_fraction", "positive-sphere radius as a fraction of min(length, width)",
          [](Config& c) -> double& { return c.sphere_radius_fraction; }),
      dbl("train.w", "box-loss weight", [](Config& c) -> double& { return c.train.w; }),
      dbl("train.lr", "SGD learning rate", [](Config& c) -> double& { return c.train.lr; }),
      dbl("train.momentum", "SGD momentum", [](Config& c) -> double& { return c.train.momentum; }),
      integer("train.epochs", "passes over the training set", [](Config& c) -> int& { return c.train.epochs; }),
      dbl("train.neg_pos_ratio", "sampled negatives per positive", [](Config& c) -> double& { return c.train.neg_pos_ratio; }),
      integer("train.min_negatives", "minimum sampled negatives per step",
              [](Config& c) -> std::size_t& { return c.train.min_negatives; }),
      integer("train.seed", "initialization and sampling seed", [](Config& c) -> std::uint64_t& { return c.train.seed; }),
      dbl("train.clip_norm", "global gradient-norm clip; 0 disables", [](Config& c) -> double& { return c.train.clip_norm; }),
      integer("train.lr_decay_epoch", "decay the learning rate every this many epochs; 0 disables",
              [](Config& c) -> int& { return c.train.lr_decay_epoch; }),
      dbl("train.lr_decay_factor", "learning-rate decay factor", [](Config& c) -> double& { return c.train.lr_decay_factor; }),
      boolean("train.augment_flip", "randomly mirror training scenes across the grid's y mid-plane",
              [](Config& c) -> bool& { return c.train.augment_flip; }),
      integer("train.augment_shift", "random whole-cell x/y translation of training scenes, in cells",
              [](Config& c) -> int& { return c.train.augment_shift; }),
      dbl("inference.threshold", "foreground probability threshold", [](Config& c) -> double& { return c.inference.threshold; }),
      dbl("inference.neighbor_radius", "mean corner distance (m) for neighbor counting",
          [](Config& c) -> double& { return c.inference.neighbor_radius; }),
      dbl("inference.overlap_threshold", "ground-plane IoU above which lower-ranked boxes are suppressed",
          [](Config& c) -> double& { return c.inference.overlap_threshold; }),
      dbl("eval.iou_threshold", "IoU needed for a true positive", [](Config& c) -> double& { return c.eval_iou_threshold; }),
      {"eval.max_occlusion", "easy,moderate,hard occlusion caps",
       [](Config& c, const std::string& v) {
         c.eval_rules.max_occlusion = to_array<int, 3>("eval.max_occlusion", v, to_int);
       },
       [](const Config& c) { return fmt_list(c.eval_rules.max_occlusion); }},
      {"eval.max_truncation", "easy,moderate,hard truncation caps",
       [](Config& c, const std::string& v) {
         c.eval_rules.max_truncation = to_array<double, 3>("eval.max_truncation", v, to_double);
       },
       [](const Config& c) { return fmt_list(c.eval_rules.max_truncation); }},
      {"eval.min_height_px", "easy,moderate,hard minimum 2D box height (image-plane metric)",
       [](Config& c, const std::string& v) {
         c.eval_rules.min_height_px = to_array<double, 3>("eval.min_height_px", v, to_double);
       },
       [](const Config& c) { return fmt_list(c.eval_rules.min_height_px); }},
      {"eval.max_range_m", "easy,moderate,hard maximum range (ground-plane metric)",
       [](Config& c, const std::string& v) {
         c.eval_rules.max_range_m = to_array<double, 3>("eval.max_range_m", v, to_double);
       },
       [](const Config& c) { return fmt_list(c.eval_rules.max_range_m); }},
      integer("synth.seed", "seed of scene 0; scene i uses seed + i", [](Config& c) -> std::uint64_t& { return c.synth.seed; }),
      integer("synth.vehicles_min", "minimum cars per scene", [](Config& c) -> int& { return c.synth.n_vehicles_min; }),
      integer("synth.vehicles_max", "maximum cars per scene", [](Config& c) -> int& { return c.synth.n_vehicles_max; }),
      range("synth.x_range", "car center x range (m)", [](Config& c) -> Range& { return c.synth.x; }),
      range("synth.y_range", "car center y range (m)", [](Config& c) -> Range& { return c.synth.y; }),
      range("synth.length_range", "car length range (m)", [](Config& c) -> Range& { return c.synth.length; }),
      range("synth.width_range", "car width range (m)", [](Config& c) -> Range& { return c.synth.width; }),
      range("synth.height_range", "car height range (m)", [](Config& c) -> Range& { return c.synth.height; }),
      range("synth.yaw_range", "car heading range (rad, sensor frame)", [](Config& c) -> Range& { return c.synth.yaw; }),
      dbl("synth.points_per_m2", "surface sample density on visible faces",
          [](Config& c) -> double& { return c.synth.points_per_m2; }),
      dbl("synth.ground_points_per_m2", "ground sample density", [](Config& c) -> double& { return c.synth.ground_points_per_m2; }),
      dbl("synth.ground_level", "ground height z (m)", [](Config& c) -> double& { return c.synth.ground_level; }),
      dbl("synth.ground_noise", "ground height noise sigma (m)", [](Config& c) -> double& { return c.synth.ground_noise_sigma; }),
      dbl("synth.surface_noise", "surface noise sigma (m)", [](Config& c) -> double& { return c.synth.surface_noise_sigma; }),
      integer("synth.clutter", "non-car clutter boxes per scene", [](Config& c) -> int& { return c.synth.clutter_count; }),
      dbl("synth.min_gap", "footprint clearance between objects (m)", [](Config& c) -> double& { return c.synth.min_gap; }),
      str("paths.loss_history", "loss-history output of train; empty means <checkpoint>.loss.txt",
          [](Config& c) -> std::string& { return c.loss_history; }),
      str("paths.pr_out", "PR dump output of eval; empty disables", [](Config& c) -> std::string& { return c.pr_out; }),
      integer("runtime.threads", "worker threads", [](Config& c) -> int& { return c.threads; }),
      dbl("gradcheck.step", "central-difference step", [](Config& c) -> double& { return c.gradcheck_step; }),
      dbl("gradcheck.threshold", "maximum allowed relative error",
          [](Config& c) -> double& { return c.gradcheck_threshold; }),
      integer("gradcheck.coords", "coordinates sampled per tensor", [](Config& c) -> std::size_t& { return c.gradcheck_coords; }),
  };
  return keys;
}

inline void set_config_value(Config& c, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys())
    if (k.name == key) return k.set(c, value);
  throw ConfigError("unknown config key '" + key + "'");
}

// `key = value` lines; '#' starts a comment.
inline void apply_config_text(Config& c, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline void apply_config_file(Config& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(c, ss.str(), path.string());
}

// "key=value" override from the command line.
inline void apply_override(Config& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
  set_config_value(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

inline std::string format_config(const Config& c, bool with_docs = true) {
  std::ostringstream os;
  for (const auto& k : config_keys()) {
    if (with_docs) os << "# " << k.doc << '\n';
    os << k.name << " = " << k.get(c) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Scene loading.

struct SceneFiles {
  PointCloud cloud;
  std::vector<ObjectLabel> labels;
  std::optional<Calibration> calib;
};

inline SceneFiles load_scene(const std::filesystem::path& dir, const std::string& id, bool need_labels) {
  SceneFiles s;
  s.cloud = read_velodyne_bin(dir / "velodyne" / (id + ".bin"));
  const auto calib_path = dir / "calib" / (id + ".txt");
  const auto label_path = dir / "label_2" / (id + ".txt");
  if (need_labels || std::filesystem::exists(calib_path)) s.calib = parse_calib(calib_path);
  if (need_labels || std::filesystem::exists(label_path)) s.labels = parse_label_file(label_path);
  return s;
}

// ---------------------------------------------------------------------------
// Subcommands.

inline int cmd_synth(const Config& cfg, const std::filesystem::path& out_dir, std::size_t count, std::ostream& log) {
  try {
    write_synthetic_dataset(out_dir, cfg.scene_spec(), count);
    log << "wrote " << count << " scenes to " << out_dir.string() << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InfeasibleSpecError& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  }
}

inline std::filesystem::path loss_history_path(const Config& cfg, const std::filesystem::path& checkpoint) {
  return cfg.loss_history.empty() ? std::filesystem::path(checkpoint.string() + ".loss.txt")
                                  : std::filesystem::path(cfg.loss_history);
}

inline void write_loss_history(const std::vector<EpochLoss>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write loss history: " + path.string());
  out << "# epoch objectness box total\n";
  char buf[128];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%d %.9g %.9g %.9g\n", e.epoch, e.objectness, e.box, e.total);
    out << buf;
  }
}

inline int cmd_train(const Config& cfg, const std::filesystem::path& data_dir, const std::filesystem::path& checkpoint_out,
                     std::ostream& log) {
  if (!std::filesystem::is_directory(data_dir)) {
    log << "error: data directory not found: " << data_dir.string() << '\n';
    return kExitUsage;
  }
  std::vector<TrainingScene> scenes;
  try {
    for (const auto& id : read_dataset_index(data_dir)) {
      auto s = load_scene(data_dir, id, true);
      TrainingScene ts;
      ts.grid = voxelize(s.cloud, cfg.grid);
      ts.targets = generate_targets(s.labels, *s.calib, cfg.grid, cfg.sphere_radius_fraction);
      scenes.push_back(std::move(ts));
    }
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  }
  if (scenes.empty()) {
    log << "error: no scenes in " << data_dir.string() << '\n';
    return kExitData;
  }
  log << "training on " << scenes.size() << " scenes, grid " << detail::fmt_list(cfg.grid.dims) << '\n';
  TrainResult res;
  try {
    if (cfg.train.epochs == 0) {
      cfg.train.validate();
      res.params = init_params(cfg.train.seed, cfg.arch);
    } else {
      res = train(scenes, cfg.train, cfg.arch, [&](const EpochLoss& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %d objectness %.6f box %.6f total %.6f\n", e.epoch, e.objectness, e.box,
                      e.total);
        log << buf << std::flush;
      });
    }
  } catch (const NumericalError& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  }
  try {
    save_checkpoint(res.params, checkpoint_out);
    write_loss_history(res.history, loss_history_path(cfg, checkpoint_out));
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

inline int cmd_detect(const Config& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                      const std::filesystem::path& out, const std::optional<std::filesystem::path>& candidates_out,
                      std::ostream& log) {
  NetworkParams params;
  try {
    params = load_checkpoint(checkpoint);
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  }
  if (!(params.arch == cfg.arch)) {
    log << "error: checkpoint architecture " << params.arch.header() << " does not match config " << cfg.arch.header()
        << '\n';
    return kExitData;
  }
  std::ofstream det_out(out, std::ios::trunc);
  if (!det_out) {
    log << "error: cannot write " << out.string() << '\n';
    return kExitData;
  }
  std::ofstream cand_out;
  if (candidates_out) {
    cand_out.open(*candidates_out, std::ios::trunc);
    if (!cand_out) {
      log << "error: cannot write " << candidates_out->string() << '\n';
      return kExitData;
    }
  }
  try {
    std::size_t total = 0;
    for (const auto& id : read_dataset_index(data_dir)) {
      const auto s = load_scene(data_dir, id, false);
      const auto fr = forward(voxelize(s.cloud, cfg.grid), params);
      const auto r = detect(fr.maps, cfg.grid, cfg.inference);
      for (const auto& d : r.detections) det_out << format_detection_line(id, d) << '\n';
      if (candidates_out)
        for (const auto& c : r.candidates) cand_out << format_candidate_line(id, c) << '\n';
      total += r.detections.size();
    }
    log << "wrote " << total << " detections to " << out.string() << '\n';
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

inline int cmd_eval(const Config& cfg, const std::filesystem::path& detections, const std::filesystem::path& gt_dir,
                    std::ostream& out, std::ostream& log) {
  std::vector<EvalFrame> frames;
  try {
    const auto ids = read_dataset_index(gt_dir);
    std::map<std::string, std::size_t> slot;
    for (const auto& id : ids) {
      const auto s = load_scene(gt_dir, id, true);
      slot[id] = frames.size();
      frames.push_back({id, {}, s.labels, *s.calib});
    }
    std::map<std::string, std::size_t> unknown;
    for (auto& sd : read_detection_file(detections)) {
      const auto it = slot.find(sd.scene_id);
      if (it == slot.end()) {
        ++unknown[sd.scene_id];
        continue;
      }
      frames[it->second].detections.push_back(sd.detection);
    }
    std::size_t skipped = 0;
    for (const auto& [id, n] : unknown) {
      log << "warning: scene '" << id << "' not in ground truth; skipped " << n << " detections\n";
      skipped += n;
    }
    if (!unknown.empty()) {
      std::size_t matched = 0;
      for (const auto& f : frames) matched += f.detections.size();
      if (matched == 0) {
        log << "error: no detection matched a ground-truth scene (" << skipped << " skipped)\n";
        return kExitData;
      }
    }
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  }
  const auto table = evaluate_table(frames, cfg.eval_iou_threshold, cfg.eval_rules);
  out << format_report(table);
  if (!cfg.pr_out.empty()) {
    std::ofstream pr(cfg.pr_out, std::ios::trunc);
    if (!pr) {
      log << "error: cannot write " << cfg.pr_out << '\n';
      return kExitData;
    }
    pr << format_pr_dump(table);
  }
  return kExitOk;
}

// `corrupt` perturbs every analytic gradient by that relative amount; it
// exists to prove the check can fail.
inline int cmd_gradcheck(const Config& cfg, std::uint64_t seed, std::ostream& out, double corrupt = 0.0) {
  GradCheckOptions opt;
  opt.seed = seed;
  opt.step = cfg.gradcheck_step;
  opt.coords_per_tensor = cfg.gradcheck_coords;
  opt.corrupt = corrupt;
  auto checks = check_layer_gradients(opt);
  const auto net = check_network_gradients(init_params(seed, cfg.arch), cfg.train.w, opt);
  bool ok = true;
  char buf[200];
  auto report = [&](const std::string& scope, const NamedCheck& c) {
    const bool pass = c.result.max_rel_error < cfg.gradcheck_threshold && c.result.checked > 0;
    ok = ok && pass;
    std::snprintf(buf, sizeof buf, "%-8s %-18s max_rel_error %.3e  checked %4zu  skipped %3zu  %s\n", scope.c_str(),
                  c.name.c_str(), c.result.max_rel_error, c.result.checked, c.result.skipped, pass ? "ok" : "FAIL");
    out << buf;
  };
  for (const auto& c : checks) report("layer", c);
  for (const auto& c : net) report("network", c);
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (threshold " << cfg.gradcheck_threshold << ")\n";
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace voxfcn
