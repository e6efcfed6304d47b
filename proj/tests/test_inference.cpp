// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "test_support.hpp"
#include "voxfcn/inference.hpp"
#include "voxfcn/synth.hpp"

namespace voxfcn {
namespace {

using testing::TempDir;

// Maps that a perfect network would emit for the given targets.
OutputMaps perfect_maps(const TargetVolume& t) {
  const std::size_t n = t.spec.cell_count();
  OutputMaps m{Tensor({2, t.spec.dims[0], t.spec.dims[1], t.spec.dims[2]}), t.dense_offsets()};
  for (std::size_t f = 0; f < n; ++f) {
    const bool fg = t.labels[f] == CellLabel::positive;
    m.objectness[f] = fg ? 6.0f : -6.0f;
    m.objectness[n + f] = fg ? -6.0f : 6.0f;
  }
  return m;
}

OrientedBox3D random_box(std::mt19937_64& rng, double spread = 10) {
  std::uniform_real_distribution<double> u(-1, 1);
  return OrientedBox3D{{spread * u(rng), spread * u(rng), u(rng)},
                       {4 + 0.5 * u(rng), 1.8 + 0.1 * u(rng), 1.5 + 0.1 * u(rng)},
                       std::numbers::pi * u(rng)};
}

Candidate candidate_of(const OrientedBox3D& b, double p = 0.9, CellIndex idx = {0, 0, 0}) {
  return {box_corners(b), idx, p};
}

Detection detection_of(const OrientedBox3D& b, int score, double p = 0.9, CellIndex idx = {0, 0, 0}) {
  Detection d;
  d.box = b;
  d.corners = box_corners(b);
  d.score = score;
  d.objectness_score = p;
  d.source_region = idx;
  return d;
}

TEST(Candidates, AllBackgroundGivesNone) {
  const GridSpec spec{{0, 0, 0}, 0.5, {8, 8, 8}};
  OutputMaps m{Tensor({2, 8, 8, 8}), Tensor({24, 8, 8, 8})};
  for (std::size_t f = 0; f < 512; ++f) m.objectness[512 + f] = 3.0f;
  EXPECT_TRUE(extract_candidates(m, spec, 0.5).empty());
}

TEST(Candidates, ThresholdZeroKeepsEveryCell) {
  const GridSpec spec{{0, 0, 0}, 0.5, {8, 8, 8}};
  OutputMaps m{Tensor({2, 8, 8, 8}), Tensor({24, 8, 8, 8})};
  std::mt19937_64 rng(1);
  testing::fill_random(m.objectness, rng, -20, 20);
  EXPECT_EQ(extract_candidates(m, spec, 0.0).size(), 512u);
}

TEST(Candidates, ProbabilityUsesNegatedLogits) {
  const GridSpec spec{{0, 0, 0}, 0.5, {8, 8, 8}};
  OutputMaps m{Tensor({2, 8, 8, 8}), Tensor({24, 8, 8, 8})};
  for (std::size_t f = 0; f < 512; ++f) m.objectness[512 + f] = 1.0f;
  m.objectness[spec.flat({1, 2, 3})] = 5.0f;
  m.objectness[512 + spec.flat({1, 2, 3})] = 0.0f;
  const auto c = extract_candidates(m, spec, 0.5);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].source_region, (CellIndex{1, 2, 3}));
  EXPECT_NEAR(c[0].objectness_score, 1.0 / (1.0 + std::exp(-5.0)), 1e-12);
}

TEST(Candidates, DecodedCornersMatchEncodedBox) {
  const auto spec = synthetic_grid();
  const auto calib = synthetic_calibration();
  const OrientedBox3D box{{12.3, -2.1, -0.9}, {4.2, 1.7, 1.5}, 0.7};
  const auto t = generate_targets({box_to_label(box, calib, "Car")}, calib, spec, 0.25);
  const auto cands = extract_candidates(perfect_maps(t), spec, 0.5);
  ASSERT_EQ(cands.size(), t.positive_cells.size());
  const auto want = box_corners(box);
  for (const auto& c : cands)
    for (int k = 0; k < 8; ++k) EXPECT_LT(norm(c.corners[k] - want[k]), 1e-6);
}

TEST(Candidates, MapShapeMismatchIsRejected) {
  const GridSpec spec{{0, 0, 0}, 0.5, {8, 8, 8}};
  OutputMaps m{Tensor({2, 8, 8, 16}), Tensor({24, 8, 8, 8})};
  EXPECT_THROW(extract_candidates(m, spec, 0.5), DimensionError);
}

TEST(Scoring, SingleAndIdenticalCandidates) {
  std::mt19937_64 rng(2);
  const auto b = random_box(rng);
  auto one = score_candidates({candidate_of(b)}, 1.0);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].score, 1);
  auto two = score_candidates({candidate_of(b), candidate_of(b)}, 1.0);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].score, 2);
  EXPECT_EQ(two[1].score, 2);
}

TEST(Scoring, MatchesPairwiseBruteForce) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> jitter(0, 0.6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto base = random_box(rng, 2);
    std::vector<Candidate> cands;
    for (int i = 0; i < 10; ++i) {
      auto c = candidate_of(base);
      for (auto& p : c.corners)
        for (double& v : p) v += jitter(rng);
      cands.push_back(c);
    }
    const double radius = 1.0;
    const auto dets = score_candidates(cands, radius);
    ASSERT_EQ(dets.size(), cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      int want = 0;
      for (std::size_t j = 0; j < cands.size(); ++j) {
        double sum = 0;
        for (int k = 0; k < 8; ++k) {
          const double dx = cands[i].corners[k][0] - cands[j].corners[k][0];
          const double dy = cands[i].corners[k][1] - cands[j].corners[k][1];
          const double dz = cands[i].corners[k][2] - cands[j].corners[k][2];
          sum += std::sqrt(dx * dx + dy * dy + dz * dz);
        }
        if (sum / 8 <= radius) ++want;
      }
      EXPECT_EQ(dets[i].score, want);
    }
  }
}

TEST(Scoring, DegenerateCandidatesAreDropped) {
  Candidate c;
  for (auto& p : c.corners) p = {1, 2, 3};
  EXPECT_TRUE(score_candidates({c}, 1.0).empty());
}

TEST(Suppression, DisjointBothKept) {
  const auto a = detection_of(OrientedBox3D{{0, 0, 0}, {4, 2, 1.5}, 0}, 3);
  const auto b = detection_of(OrientedBox3D{{10, 0, 0}, {4, 2, 1.5}, 0}, 2);
  EXPECT_EQ(suppress({a, b}, 0.1).size(), 2u);
}

TEST(Suppression, IdenticalKeepsHigherScore) {
  const OrientedBox3D box{{5, 1, 0}, {4, 2, 1.5}, 0.3};
  const auto kept = suppress({detection_of(box, 3), detection_of(box, 5)}, 0.1);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 5);
}

TEST(Suppression, TiesFallBackToObjectnessThenRegion) {
  const OrientedBox3D box{{5, 1, 0}, {4, 2, 1.5}, 0.3};
  auto kept = suppress({detection_of(box, 4, 0.6), detection_of(box, 4, 0.8)}, 0.1);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].objectness_score, 0.8);
  kept = suppress({detection_of(box, 4, 0.8, {3, 1, 0}), detection_of(box, 4, 0.8, {2, 9, 9})}, 0.1);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].source_region, (CellIndex{2, 9, 9}));
}

// Greedy NMS over a precomputed IoU matrix, by repeated arg-max.
std::vector<std::size_t> reference_nms(const std::vector<Detection>& d, const std::vector<std::vector<double>>& iou,
                                       double thr) {
  std::vector<char> alive(d.size(), 1);
  std::vector<std::size_t> out;
  for (;;) {
    std::size_t best = d.size();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!alive[i]) continue;
      if (best == d.size()) {
        best = i;
        continue;
      }
      const auto& a = d[i];
      const auto& b = d[best];
      const bool better = a.score != b.score                       ? a.score > b.score
                          : a.objectness_score != b.objectness_score ? a.objectness_score > b.objectness_score
                                                                     : a.source_region < b.source_region;
      if (better) best = i;
    }
    if (best == d.size()) break;
    out.push_back(best);
    alive[best] = 0;
    for (std::size_t j = 0; j < d.size(); ++j)
      if (alive[j] && iou[best][j] > thr) alive[j] = 0;
  }
  return out;
}

TEST(Suppression, MatchesReferenceGreedyNms) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> score(1, 6);
  std::uniform_real_distribution<double> prob(0.5, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 20; ++i) {
      dets.push_back(detection_of(random_box(rng, 6), score(rng), prob(rng),
                                  {static_cast<std::size_t>(i), 0, 0}));
    }
    std::vector<std::vector<double>> iou(20, std::vector<double>(20));
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) iou[i][j] = ground_plane_iou(dets[i].box, dets[j].box);
    const double thr = trial % 2 ? 0.1 : 0.3;
    const auto want = reference_nms(dets, iou, thr);
    const auto got = suppress(dets, thr);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].source_region, dets[want[i]].source_region);
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = i + 1; j < got.size(); ++j) EXPECT_LE(ground_plane_iou(got[i].box, got[j].box), thr);
  }
}

TEST(Detect, PerfectTargetReproducesOneBox) {
  const auto spec = synthetic_grid();
  const auto calib = synthetic_calibration();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const OrientedBox3D box{{12 + 6 * u(rng), 6 * u(rng), -0.9}, {4 + 0.3 * u(rng), 1.8, 1.5}, 1.5 * u(rng)};
    const auto t = generate_targets({box_to_label(box, calib, "Car")}, calib, spec, 0.25);
    const auto r = detect(perfect_maps(t), spec, InferenceConfig{});
    EXPECT_EQ(r.candidates.size(), t.positive_cells.size());
    ASSERT_EQ(r.detections.size(), 1u);
    const auto& d = r.detections[0];
    EXPECT_EQ(d.score, static_cast<int>(t.positive_cells.size()));
    for (int a = 0; a < 3; ++a) {
      EXPECT_NEAR(d.box.center[a], box.center[a], 1e-5);
      EXPECT_NEAR(d.box.size[a], box.size[a], 1e-5);
    }
    EXPECT_NEAR(normalize_angle(d.box.yaw - box.yaw), 0, 1e-5);
  }
}

TEST(Detect, InvalidConfigIsRejected) {
  const GridSpec spec{{0, 0, 0}, 0.5, {8, 8, 8}};
  OutputMaps m{Tensor({2, 8, 8, 8}), Tensor({24, 8, 8, 8})};
  InferenceConfig cfg;
  cfg.threshold = 1.5;
  EXPECT_THROW(detect(m, spec, cfg), ConfigError);
}

TEST(CornersToBox, InvertsBoxCorners) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto b = random_box(rng);
    const auto back = corners_to_box(box_corners(b));
    for (int a = 0; a < 3; ++a) {
      EXPECT_NEAR(back.center[a], b.center[a], 1e-9);
      EXPECT_NEAR(back.size[a], b.size[a], 1e-9);
    }
    // The corner order fixes the heading, so yaw comes back without a pi ambiguity.
    EXPECT_NEAR(normalize_angle(back.yaw - b.yaw), 0, 1e-9);
  }
}

TEST(CornersToBox, NoisyCornersCenterWithinOneCentimetre) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0, 0.01);
  const OrientedBox3D b{{8, -3, -0.8}, {4.1, 1.75, 1.5}, 0.9};
  Vec3 mean_err{0, 0, 0};
  constexpr int kTrials = 100;
  for (int t = 0; t < kTrials; ++t) {
    auto c = box_corners(b);
    for (auto& p : c)
      for (double& v : p) v += noise(rng);
    mean_err = mean_err + (1.0 / kTrials) * (corners_to_box(c).center - b.center);
  }
  EXPECT_LT(norm(mean_err), 0.01);
}

TEST(CornersToBox, CoincidentCornersAreDegenerate) {
  Corners c;
  for (auto& p : c) p = {1, 1, 1};
  EXPECT_THROW(corners_to_box(c), DegenerateBoxError);
}

TEST(DetectionFile, FormatParseRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(9);
  const auto d = detection_of(random_box(rng), 7, 0.8125);
  {
    std::ofstream out(dir / "d.txt");
    out << format_detection_line("000004", d) << "\n\n";
  }
  const auto back = read_detection_file(dir / "d.txt");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].scene_id, "000004");
  EXPECT_EQ(back[0].detection.score, 7);
  EXPECT_DOUBLE_EQ(back[0].detection.objectness_score, 0.8125);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(back[0].detection.box.center[a], d.box.center[a], 1e-6);
  for (int k = 0; k < 8; ++k)
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(back[0].detection.corners[k][a], d.corners[k][a], 1e-6);
}

TEST(DetectionFile, WrongColumnCountIsParseError) {
  TempDir dir;
  std::ofstream(dir / "d.txt") << "000001 1 2 3\n";
  EXPECT_THROW(read_detection_file(dir / "d.txt"), ParseError);
}

}  // namespace
}  // namespace voxfcn
