// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "voxfcn/cli.hpp"

namespace voxfcn {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("voxfcn_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Runs the built CLI; returns its exit status.
int run_cli(const std::string& args, std::string* output = nullptr) {
  static int calls = 0;
  const fs::path out = fs::temp_directory_path() /
                       ("voxfcn_cli_out_" + std::to_string(getpid()) + "_" + std::to_string(calls++) + ".txt");
  const std::string cmd = std::string("\"") + VOXFCN_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = slurp(out);
  fs::remove(out);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Config synthetic_config() {
  Config c;
  c.grid = synthetic_grid();
  return c;
}

// Config parsing ------------------------------------------------------------

TEST(Config, ParsesCommentsAndValues) {
  Config c;
  apply_config_text(c,
                    "# comment\n"
                    "\n"
                    "grid.voxel_size = 0.4   # trailing comment\n"
                    "grid.dims = 64, 64, 16\n"
                    "train.augment_flip = true\n"
                    "train.augment_shift = 3\n",
                    "inline");
  EXPECT_EQ(c.grid.voxel_size, 0.4);
  EXPECT_EQ(c.grid.dims, (std::array<std::size_t, 3>{64, 64, 16}));
  EXPECT_TRUE(c.train.augment_flip);
  EXPECT_EQ(c.train.augment_shift, 3);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  Config c;
  EXPECT_THROW(apply_config_text(c, "no.such.key = 1\n", "inline"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "train.lr = fast\n", "inline"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "grid.dims = 64,64\n", "inline"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "train.augment_flip = maybe\n", "inline"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "just some text\n", "inline"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.lr"), ConfigError);
}

TEST(Config, BooleanSpellings) {
  Config c;
  for (const char* t : {"true", "1"}) {
    apply_override(c, std::string("train.augment_flip=") + t);
    EXPECT_TRUE(c.train.augment_flip);
    apply_override(c, "train.augment_flip=false");
    EXPECT_FALSE(c.train.augment_flip);
  }
  apply_override(c, "train.augment_flip=1");
  apply_override(c, "train.augment_flip=0");
  EXPECT_FALSE(c.train.augment_flip);
}

TEST(Config, FormattedConfigReparsesToSameValues) {
  Config c = synthetic_config();
  c.train.lr = 0.0025;
  c.synth.seed = 99;
  Config d;
  apply_config_text(d, format_config(c), "formatted");
  EXPECT_EQ(format_config(d, false), format_config(c, false));
}

TEST(Config, FlagsOverrideFileOverrideDefaults) {
  TempDir dir("precedence");
  std::ofstream(dir.path / "a.cfg") << "train.lr = 0.5\ntrain.epochs = 7\n";
  std::string out;
  ASSERT_EQ(run_cli("config -c \"" + (dir.path / "a.cfg").string() + "\" -s train.lr=0.25", &out), 0);
  EXPECT_NE(out.find("train.lr = 0.25"), std::string::npos);
  EXPECT_NE(out.find("train.epochs = 7"), std::string::npos);
  EXPECT_NE(out.find("train.momentum = 0.9"), std::string::npos);
}

// Exit codes -----------------------------------------------------------------

TEST(ExitCodes, UsageErrors) {
  EXPECT_EQ(run_cli(""), kExitUsage);
  EXPECT_EQ(run_cli("frobnicate"), kExitUsage);
  EXPECT_EQ(run_cli("config -s no.such.key=1"), kExitUsage);
  EXPECT_EQ(run_cli("config -c /nonexistent/file.cfg"), kExitUsage);
  EXPECT_EQ(run_cli("gradcheck -s bogus=1"), kExitUsage);
  EXPECT_EQ(run_cli("--help"), kExitOk);
}

TEST(ExitCodes, GradcheckPassesAndDetectsCorruption) {
  // A reduced coordinate sample keeps this fast; the full check runs in the acceptance binary.
  std::string out;
  EXPECT_EQ(run_cli("gradcheck -s gradcheck.coords=6", &out), kExitOk) << out;
  EXPECT_NE(out.find("gradcheck passed"), std::string::npos);
  EXPECT_EQ(run_cli("gradcheck -s gradcheck.coords=6 --corrupt-gradient 0.01", &out), kExitNumerical) << out;
  EXPECT_NE(out.find("FAIL"), std::string::npos);
}

TEST(ExitCodes, TrainMissingDataDirIsUsageError) {
  TempDir dir("train_missing");
  std::ostringstream log;
  EXPECT_EQ(cmd_train(synthetic_config(), dir.path / "absent", dir.path / "ck.bin", log), kExitUsage);
  EXPECT_EQ(run_cli("train \"" + (dir.path / "absent").string() + "\" \"" + (dir.path / "ck.bin").string() + "\""),
            kExitUsage);
}

TEST(ExitCodes, CorruptCheckpointIsDataError) {
  TempDir dir("corrupt_ckpt");
  const auto cfg = synthetic_config();
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "data", 1, log), kExitOk);
  std::ofstream(dir.path / "bad.bin") << "not a checkpoint";
  EXPECT_EQ(cmd_detect(cfg, dir.path / "bad.bin", dir.path / "data", dir.path / "det.txt", std::nullopt, log), kExitData);
  EXPECT_EQ(run_cli("detect -s grid.dims=64,64,16 -s grid.voxel_size=0.4 -s grid.origin=0,-12.8,-3.2 \"" +
                    (dir.path / "bad.bin").string() + "\" \"" + (dir.path / "data").string() + "\" -o \"" +
                    (dir.path / "det.txt").string() + "\""),
            kExitData);
}

TEST(ExitCodes, ArchitectureMismatchIsDataError) {
  TempDir dir("arch");
  auto cfg = synthetic_config();
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "data", 1, log), kExitOk);
  save_checkpoint(init_params(1, cfg.arch), dir.path / "ck.bin");
  cfg.arch.channels = {8, 16, 32};
  EXPECT_EQ(cmd_detect(cfg, dir.path / "ck.bin", dir.path / "data", dir.path / "det.txt", std::nullopt, log), kExitData);
  EXPECT_NE(log.str().find("does not match"), std::string::npos);
}

// synth -----------------------------------------------------------------------

TEST(CmdSynth, CountZeroWritesEmptyIndex) {
  TempDir dir("synth0");
  std::ostringstream log;
  EXPECT_EQ(cmd_synth(synthetic_config(), dir.path / "d", 0, log), kExitOk);
  EXPECT_EQ(slurp(dir.path / "d" / "index.txt"), "");
}

TEST(CmdSynth, CountTenWritesThirtyFilesAndIndex) {
  TempDir dir("synth10");
  ASSERT_EQ(run_cli("synth -c \"" + std::string(VOXFCN_SOURCE_DIR) + "/configs/synthetic.cfg\" -n 10 \"" +
                    (dir.path / "d").string() + "\""),
            kExitOk);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path / "d")) files += e.is_regular_file();
  EXPECT_EQ(files, 31u);
  EXPECT_EQ(read_dataset_index(dir.path / "d").size(), 10u);
}

TEST(CmdSynth, SameSeedSameBytesDifferentSeedDifferentBytes) {
  TempDir dir("synth_seed");
  auto cfg = synthetic_config();
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "a", 2, log), kExitOk);
  ASSERT_EQ(cmd_synth(cfg, dir.path / "b", 2, log), kExitOk);
  cfg.synth.seed = 2;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "c", 2, log), kExitOk);
  for (const char* rel : {"velodyne/000000.bin", "velodyne/000001.bin", "label_2/000001.txt", "calib/000000.txt"})
    EXPECT_EQ(slurp(dir.path / "a" / rel), slurp(dir.path / "b" / rel)) << rel;
  EXPECT_NE(slurp(dir.path / "a" / "velodyne/000000.bin"), slurp(dir.path / "c" / "velodyne/000000.bin"));
}

TEST(CmdSynth, UnwritableDirectoryFails) {
  TempDir dir("synth_unwritable");
  std::ofstream(dir.path / "file") << "x";
  std::ostringstream log;
  EXPECT_NE(cmd_synth(synthetic_config(), dir.path / "file" / "sub", 1, log), kExitOk);
  EXPECT_NE(log.str().find("error"), std::string::npos);
}

TEST(CmdSynth, InfeasibleSpecIsConfigError) {
  TempDir dir("synth_infeasible");
  auto cfg = synthetic_config();
  cfg.synth.n_vehicles_min = cfg.synth.n_vehicles_max = 50;
  std::ostringstream log;
  EXPECT_EQ(cmd_synth(cfg, dir.path / "d", 1, log), kExitUsage);
}

// train -------------------------------------------------------------------------

TEST(CmdTrain, ZeroEpochsWritesInitialParameters) {
  TempDir dir("train0");
  auto cfg = synthetic_config();
  cfg.train.epochs = 0;
  cfg.train.seed = 5;
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "d", 2, log), kExitOk);
  ASSERT_EQ(cmd_train(cfg, dir.path / "d", dir.path / "ck.bin", log), kExitOk) << log.str();
  EXPECT_TRUE(load_checkpoint(dir.path / "ck.bin") == init_params(5, cfg.arch));
  EXPECT_EQ(slurp(dir.path / "ck.bin.loss.txt"), "# epoch objectness box total\n");
}

TEST(CmdTrain, EmptyDatasetIsDataError) {
  TempDir dir("train_empty");
  const auto cfg = synthetic_config();
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "d", 0, log), kExitOk);
  EXPECT_EQ(cmd_train(cfg, dir.path / "d", dir.path / "ck.bin", log), kExitData);
}

TEST(CmdTrain, RepeatRunsAreBitIdentical) {
  TempDir dir("train_repeat");
  auto cfg = synthetic_config();
  cfg.train.epochs = 2;
  cfg.train.augment_flip = true;
  cfg.train.augment_shift = 2;
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "d", 3, log), kExitOk);
  ASSERT_EQ(cmd_train(cfg, dir.path / "d", dir.path / "a.bin", log), kExitOk) << log.str();
  ASSERT_EQ(cmd_train(cfg, dir.path / "d", dir.path / "b.bin", log), kExitOk) << log.str();
  EXPECT_EQ(slurp(dir.path / "a.bin"), slurp(dir.path / "b.bin"));
  const auto hist = slurp(dir.path / "a.bin.loss.txt");
  EXPECT_EQ(hist, slurp(dir.path / "b.bin.loss.txt"));
  std::istringstream lines(hist);
  std::string header, l1, l2, extra;
  std::getline(lines, header);
  std::getline(lines, l1);
  std::getline(lines, l2);
  EXPECT_EQ(l1.rfind("1 ", 0), 0u);
  EXPECT_EQ(l2.rfind("2 ", 0), 0u);
  EXPECT_FALSE(std::getline(lines, extra));
}

TEST(CmdTrain, HistoryPathOverride) {
  TempDir dir("train_hist");
  auto cfg = synthetic_config();
  cfg.train.epochs = 0;
  cfg.loss_history = (dir.path / "h.txt").string();
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "d", 1, log), kExitOk);
  ASSERT_EQ(cmd_train(cfg, dir.path / "d", dir.path / "ck.bin", log), kExitOk);
  EXPECT_TRUE(fs::exists(dir.path / "h.txt"));
  EXPECT_FALSE(fs::exists(dir.path / "ck.bin.loss.txt"));
}

// detect ------------------------------------------------------------------------

// Parameters that call every cell background when the input is empty.
NetworkParams background_params(const ArchConfig& arch) {
  auto p = init_params(1, arch);
  p.deconv4a.bias[0] = -6.0f;
  p.deconv4a.bias[1] = 6.0f;
  return p;
}

void write_empty_scene(const fs::path& dir, const std::string& id) {
  make_dataset_dirs(dir);
  write_velodyne_bin(PointCloud{}, dir / "velodyne" / (id + ".bin"));
  write_calib(synthetic_calibration(), dir / "calib" / (id + ".txt"));
  write_label_file({}, dir / "label_2" / (id + ".txt"));
  std::ofstream(dir / "index.txt") << id << '\n';
}

TEST(CmdDetect, EmptySceneGivesEmptyDetectionFile) {
  TempDir dir("detect_empty");
  const auto cfg = synthetic_config();
  write_empty_scene(dir.path / "d", "000000");
  save_checkpoint(background_params(cfg.arch), dir.path / "ck.bin");
  std::ostringstream log;
  ASSERT_EQ(cmd_detect(cfg, dir.path / "ck.bin", dir.path / "d", dir.path / "det.txt", dir.path / "cand.txt", log),
            kExitOk)
      << log.str();
  EXPECT_TRUE(fs::exists(dir.path / "det.txt"));
  EXPECT_EQ(slurp(dir.path / "det.txt"), "");
  EXPECT_EQ(slurp(dir.path / "cand.txt"), "");
}

TEST(CmdDetect, OutputIsWellFormedAndDeterministic) {
  TempDir dir("detect_form");
  auto cfg = synthetic_config();
  std::ostringstream log;
  ASSERT_EQ(cmd_synth(cfg, dir.path / "d", 2, log), kExitOk);
  // Untrained weights: put the threshold at the 200th highest foreground probability of scene 0.
  const auto params = init_params(3, cfg.arch);
  save_checkpoint(params, dir.path / "ck.bin");
  const auto maps = forward(voxelize(read_velodyne_bin(dir.path / "d" / "velodyne" / "000000.bin"), cfg.grid), params).maps;
  const std::size_t n = cfg.grid.cell_count();
  std::vector<double> probs(n);
  for (std::size_t f = 0; f < n; ++f) probs[f] = foreground_probability(maps.objectness[f], maps.objectness[n + f]);
  std::nth_element(probs.begin(), probs.begin() + 199, probs.end(), std::greater<>());
  cfg.inference.threshold = probs[199];
  ASSERT_EQ(cmd_detect(cfg, dir.path / "ck.bin", dir.path / "d", dir.path / "a.txt", dir.path / "c.txt", log), kExitOk);
  ASSERT_EQ(cmd_detect(cfg, dir.path / "ck.bin", dir.path / "d", dir.path / "b.txt", std::nullopt, log), kExitOk);
  EXPECT_EQ(slurp(dir.path / "a.txt"), slurp(dir.path / "b.txt"));
  const auto dets = read_detection_file(dir.path / "a.txt");
  for (const auto& d : dets) {
    EXPECT_TRUE(d.scene_id == "000000" || d.scene_id == "000001");
    EXPECT_GE(d.detection.score, 1);
    EXPECT_GE(d.detection.objectness_score, cfg.inference.threshold - 1e-6);
  }
  std::istringstream cands(slurp(dir.path / "c.txt"));
  std::size_t n_cands = 0;
  for (std::string line; std::getline(cands, line); ++n_cands) {
    std::istringstream ls(line);
    std::string id;
    ls >> id;
    std::size_t fields = 0;
    for (double v; ls >> v;) ++fields;
    EXPECT_EQ(fields, 3u + 24u + 1u);
  }
  EXPECT_GT(dets.size(), 0u);
  EXPECT_GE(n_cands, dets.size());
}

// eval ----------------------------------------------------------------------------

struct EvalFixture {
  TempDir dir{"eval"};
  fs::path gt = dir.path / "gt";
  std::vector<OrientedBox3D> boxes;

  EvalFixture() {
    make_dataset_dirs(gt);
    const auto calib = synthetic_calibration();
    // Three frames: one car, one car, two cars; all near, unoccluded, fully in view.
    const std::vector<std::vector<OrientedBox3D>> frames{
        {{{10, 0, -0.95}, {4, 1.8, 1.5}, 0.1}},
        {{{15, 2, -0.95}, {4, 1.8, 1.5}, -0.3}},
        {{{20, -2, -0.95}, {4.2, 1.7, 1.5}, 0.0}, {{12, -3, -0.95}, {3.8, 1.7, 1.5}, 0.5}}};
    std::ofstream idx(gt / "index.txt");
    for (std::size_t f = 0; f < frames.size(); ++f) {
      std::vector<ObjectLabel> labels;
      for (const auto& b : frames[f]) {
        labels.push_back(box_to_label(b, calib, "Car"));
        labels.back().bbox2d = *image_plane_box(box_corners(b), calib);
        boxes.push_back(b);
      }
      const auto id = scene_id(f);
      write_label_file(labels, gt / "label_2" / (id + ".txt"));
      write_calib(calib, gt / "calib" / (id + ".txt"));
      write_velodyne_bin(PointCloud{}, gt / "velodyne" / (id + ".bin"));
      idx << id << '\n';
    }
  }

  static Detection det(const OrientedBox3D& b, int score) {
    Detection d;
    d.box = b;
    d.corners = box_corners(b);
    d.score = score;
    d.objectness_score = 0.9;
    return d;
  }

  fs::path write_dets(const std::vector<std::pair<std::string, Detection>>& dets, const std::string& name) const {
    const auto p = dir.path / name;
    std::ofstream out(p);
    for (const auto& [id, d] : dets) out << format_detection_line(id, d) << '\n';
    return p;
  }
};

std::map<std::string, double> parse_pr(const fs::path& p) {
  std::map<std::string, double> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos || line.find(',') != std::string::npos) continue;
    const auto key = line.substr(0, eq);
    if (key.ends_with(".ap") || key.ends_with(".aos")) out[key] = std::stod(line.substr(eq + 3));
  }
  return out;
}

TEST(CmdEval, GroundTruthAsDetectionsIsPerfect) {
  EvalFixture fx;
  std::vector<std::pair<std::string, Detection>> dets;
  const std::vector<std::string> ids{"000000", "000001", "000002", "000002"};
  for (std::size_t i = 0; i < fx.boxes.size(); ++i) dets.emplace_back(ids[i], EvalFixture::det(fx.boxes[i], 5));
  auto cfg = synthetic_config();
  cfg.pr_out = (fx.dir.path / "pr.txt").string();
  std::ostringstream out, log;
  ASSERT_EQ(cmd_eval(cfg, fx.write_dets(dets, "d.txt"), fx.gt, out, log), kExitOk) << log.str();
  const auto pr = parse_pr(fx.dir.path / "pr.txt");
  ASSERT_EQ(pr.size(), 12u);
  for (const auto& [k, v] : pr) EXPECT_DOUBLE_EQ(v, 1.0) << k;
  EXPECT_NE(out.str().find("100.0%"), std::string::npos);
}

TEST(CmdEval, EmptyDetectionsScoreZero) {
  EvalFixture fx;
  auto cfg = synthetic_config();
  cfg.pr_out = (fx.dir.path / "pr.txt").string();
  std::ostringstream out, log;
  ASSERT_EQ(cmd_eval(cfg, fx.write_dets({}, "d.txt"), fx.gt, out, log), kExitOk);
  for (const auto& [k, v] : parse_pr(fx.dir.path / "pr.txt")) EXPECT_EQ(v, 0.0) << k;
}

TEST(CmdEval, HandComputedThreeFrameFixture) {
  EvalFixture fx;
  // Ranked by score: TP (frame 0), FP (frame 1, nowhere near a car), TP (frame 2),
  // TP (frame 1); the second car of frame 2 is missed. With 4 cars:
  //   recall    0.25 0.25 0.50 0.75
  //   precision 1    0.5  2/3  0.75
  // 11-point interpolation: recalls 0, 0.1, 0.2 -> 1; 0.3 .. 0.7 -> 0.75; 0.8 .. 1 -> 0.
  const double expected = (3 * 1.0 + 5 * 0.75) / 11.0;
  const OrientedBox3D stray{{8, 6, -0.95}, {4, 1.8, 1.5}, 0};
  const auto d = fx.write_dets({{"000000", EvalFixture::det(fx.boxes[0], 9)},
                                {"000001", EvalFixture::det(stray, 8)},
                                {"000002", EvalFixture::det(fx.boxes[2], 7)},
                                {"000001", EvalFixture::det(fx.boxes[1], 5)}},
                               "d.txt");
  auto cfg = synthetic_config();
  cfg.pr_out = (fx.dir.path / "pr.txt").string();
  std::ostringstream out, log;
  ASSERT_EQ(cmd_eval(cfg, d, fx.gt, out, log), kExitOk) << log.str();
  const auto pr = parse_pr(fx.dir.path / "pr.txt");
  for (const char* diff : {"easy", "moderate", "hard"}) {
    // The dump carries 9 significant digits.
    EXPECT_NEAR(pr.at(std::string("ground_plane.") + diff + ".ap"), expected, 1e-9) << diff;
    EXPECT_NEAR(pr.at(std::string("ground_plane.") + diff + ".aos"), expected, 1e-9) << diff;
  }
}

TEST(CmdEval, UnknownSceneIdsAreSkippedWithWarning) {
  EvalFixture fx;
  const auto d = fx.write_dets({{"000000", EvalFixture::det(fx.boxes[0], 3)},
                                {"999999", EvalFixture::det(fx.boxes[0], 3)}},
                               "d.txt");
  std::ostringstream out, log;
  EXPECT_EQ(cmd_eval(synthetic_config(), d, fx.gt, out, log), kExitOk);
  EXPECT_NE(log.str().find("999999"), std::string::npos);

  const auto all_bad = fx.write_dets({{"999999", EvalFixture::det(fx.boxes[0], 3)}}, "bad.txt");
  EXPECT_EQ(cmd_eval(synthetic_config(), all_bad, fx.gt, out, log), kExitData);
}

TEST(CmdEval, MissingInputsAreDataErrors) {
  EvalFixture fx;
  std::ostringstream out, log;
  EXPECT_EQ(cmd_eval(synthetic_config(), fx.dir.path / "absent.txt", fx.gt, out, log), kExitData);
  EXPECT_EQ(cmd_eval(synthetic_config(), fx.write_dets({}, "d.txt"), fx.dir.path / "nogt", out, log), kExitData);
}

}  // namespace
}  // namespace voxfcn
