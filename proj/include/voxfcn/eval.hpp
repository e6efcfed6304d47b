// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// KITTI-style evaluation of 3D detections: image-plane and ground-plane
// overlap, greedy matching, 11-point interpolated AP and AOS per difficulty.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"
#include "voxfcn/geometry.hpp"
#include "voxfcn/inference.hpp"
#include "voxfcn/io_kitti.hpp"
#include "voxfcn/voxel.hpp"

namespace voxfcn {

enum class Metric { image_plane, ground_plane };
enum class Difficulty { easy = 0, moderate = 1, hard = 2, none = 3 };
enum class DifficultyMode { image_2d, range_3d };

inline const char* to_string(Metric m) { return m == Metric::image_plane ? "image_plane" : "ground_plane"; }
inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::moderate: return "moderate";
    case Difficulty::hard: return "hard";
    default: return "none";
  }
}

// Occlusion / truncation caps and range / height floors per difficulty.
struct DifficultyRules {
  std::array<int, 3> max_occlusion{0, 1, 2};
  std::array<double, 3> max_truncation{0.15, 0.30, 0.50};
  std::array<double, 3> min_height_px{40, 25, 25};
  std::array<double, 3> max_range_m{28, 47, 47};
};

struct EvalConfig {
  Metric metric = Metric::ground_plane;
  double iou_threshold = 0.7;
  Difficulty difficulty = Difficulty::moderate;
  // Defaults to image_2d for the image-plane metric, range_3d for ground plane.
  std::optional<DifficultyMode> mode;
  DifficultyRules rules;

  DifficultyMode effective_mode() const {
    return mode.value_or(metric == Metric::image_plane ? DifficultyMode::image_2d : DifficultyMode::range_3d);
  }
  void validate() const {
    if (!(iou_threshold > 0) || iou_threshold > 1) throw ConfigError("eval.iou_threshold must be in (0, 1]");
    if (difficulty == Difficulty::none) throw ConfigError("eval.difficulty must be easy, moderate or hard");
  }
};

// Easiest level whose criteria the object meets. range_3d measures the
// horizontal camera-frame distance to the object.
inline Difficulty difficulty_bin(const ObjectLabel& gt, DifficultyMode mode, const DifficultyRules& rules = {}) {
  const double height = gt.bbox2d.bottom - gt.bbox2d.top;
  const double range = std::hypot(gt.location[0], gt.location[2]);
  for (int d = 0; d < 3; ++d) {
    if (gt.occlusion > rules.max_occlusion[d] || gt.truncation > rules.max_truncation[d]) continue;
    const bool near_enough =
        mode == DifficultyMode::image_2d ? height >= rules.min_height_px[d] : range <= rules.max_range_m[d];
    if (near_enough) return static_cast<Difficulty>(d);
  }
  return Difficulty::none;
}

// Minimum rectangle around the projected corners, clipped to the image.
// Corners behind the camera are left out; nullopt when none is in front.
inline std::optional<Rect> image_plane_box(const Corners& corners, const Calibration& calib) {
  const auto proj = project_points(std::span<const Vec3>(corners.data(), corners.size()), calib);
  Rect r{1e300, 1e300, -1e300, -1e300};
  bool any = false;
  for (const auto& p : proj) {
    if (!p.in_front) continue;
    any = true;
    r.left = std::min(r.left, p.u);
    r.right = std::max(r.right, p.u);
    r.top = std::min(r.top, p.v);
    r.bottom = std::max(r.bottom, p.v);
  }
  if (!any) return std::nullopt;
  const double w = calib.image_size[0], h = calib.image_size[1];
  r.left = std::clamp(r.left, 0.0, w);
  r.right = std::clamp(r.right, 0.0, w);
  r.top = std::clamp(r.top, 0.0, h);
  r.bottom = std::clamp(r.bottom, 0.0, h);
  return r;
}

inline std::optional<Rect> image_plane_box(const Detection& det, const Calibration& calib) {
  return image_plane_box(det.corners, calib);
}

// ---------------------------------------------------------------------------
// Matching.

enum class MatchKind { true_positive, false_positive, ignored };

struct MatchResult {
  std::vector<MatchKind> detections;
  std::vector<double> delta_yaw;     // per detection; meaningful for true positives
  std::vector<char> gt_found;        // per ground truth; only evaluated ones can be found
  std::vector<char> gt_evaluated;    // ground truth counted at this difficulty
  std::size_t evaluated_gt_count() const {
    return static_cast<std::size_t>(std::count(gt_evaluated.begin(), gt_evaluated.end(), 1));
  }
  std::size_t true_positives() const {
    return static_cast<std::size_t>(std::count(detections.begin(), detections.end(), MatchKind::true_positive));
  }
};

// Yaw error for orientation similarity; a detection's yaw and yaw + pi
// describe the same footprint, so the one nearer the ground truth is used.
inline double orientation_delta(double det_yaw, double gt_yaw) {
  double d = normalize_angle(det_yaw - gt_yaw);
  if (std::abs(d) > std::numbers::pi / 2) d = normalize_angle(d - std::numbers::pi);
  return d;
}

// Overlap of every detection with every ground truth under the metric;
// -1 marks a detection that cannot be projected into the image.
inline std::vector<std::vector<double>> overlap_matrix(const std::vector<Detection>& dets,
                                                       const std::vector<ObjectLabel>& gts, const Calibration& calib,
                                                       Metric metric) {
  std::vector<std::vector<double>> iou(dets.size(), std::vector<double>(gts.size(), 0.0));
  if (metric == Metric::ground_plane) {
    std::vector<Polygon> gp;
    for (const auto& g : gts) gp.push_back(ground_plane_polygon(label_to_box(g, calib)));
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto dp = ground_plane_polygon(dets[i].box);
      for (std::size_t j = 0; j < gts.size(); ++j) iou[i][j] = iou_rotated(dp, gp[j]);
    }
  } else {
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto r = image_plane_box(dets[i], calib);
      for (std::size_t j = 0; j < gts.size(); ++j) iou[i][j] = r ? iou_axis_aligned(*r, gts[j].bbox2d) : -1.0;
    }
  }
  return iou;
}

// `dets` must already be in rank order. Each detection, in turn, takes the
// unmatched ground truth of highest overlap above the threshold: an evaluated
// Car makes it a true positive, a Van/Truck or a Car outside the difficulty
// makes it ignored. With no such ground truth it is a false positive.
inline MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<ObjectLabel>& gts,
                                    const Calibration& calib, const EvalConfig& cfg) {
  MatchResult r;
  r.detections.assign(dets.size(), MatchKind::false_positive);
  r.delta_yaw.assign(dets.size(), 0.0);
  r.gt_found.assign(gts.size(), 0);
  r.gt_evaluated.assign(gts.size(), 0);
  std::vector<char> gt_ignore(gts.size(), 0);
  const auto mode = cfg.effective_mode();
  for (std::size_t j = 0; j < gts.size(); ++j) {
    if (is_positive_class(gts[j].class_name)) {
      const auto bin = difficulty_bin(gts[j], mode, cfg.rules);
      if (bin != Difficulty::none && static_cast<int>(bin) <= static_cast<int>(cfg.difficulty)) {
        r.gt_evaluated[j] = 1;
      } else {
        gt_ignore[j] = 1;
      }
    } else if (is_ignored_class(gts[j].class_name)) {
      gt_ignore[j] = 1;
    }
  }
  const auto iou = overlap_matrix(dets, gts, calib, cfg.metric);
  std::vector<char> used(gts.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    // Entirely behind the camera: a false positive on the image plane,
    // excluded from the ground-plane evaluation. In front of the camera but
    // outside the image: excluded from the image-plane evaluation.
    const auto box2d = image_plane_box(dets[i], calib);
    if (!box2d) {
      if (cfg.metric == Metric::ground_plane) r.detections[i] = MatchKind::ignored;
      continue;
    }
    if (cfg.metric == Metric::image_plane && !(box2d->area() > 0)) {
      r.detections[i] = MatchKind::ignored;
      continue;
    }
    // The unmatched ground truth of highest overlap above the threshold,
    // evaluated or ignorable; an evaluated one wins ties.
    std::size_t best = gts.size();
    double best_iou = cfg.iou_threshold;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || !(r.gt_evaluated[j] || gt_ignore[j])) continue;
      const bool better = iou[i][j] > best_iou ||
                          (best < gts.size() && iou[i][j] == best_iou && r.gt_evaluated[j] && !r.gt_evaluated[best]);
      if (better) {
        best_iou = iou[i][j];
        best = j;
      }
    }
    if (best == gts.size()) continue;
    used[best] = 1;
    if (r.gt_evaluated[best]) {
      r.gt_found[best] = 1;
      r.detections[i] = MatchKind::true_positive;
      r.delta_yaw[i] = orientation_delta(dets[i].box.yaw, label_to_box(gts[best], calib).yaw);
    } else {
      r.detections[i] = MatchKind::ignored;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Precision / recall.

struct RankedOutcome {
  bool true_positive = false;
  double delta_yaw = 0;  // used when true_positive
};

struct PRCurve {
  std::vector<std::pair<double, double>> points;  // (recall, precision) per rank
  std::vector<double> similarity;                 // orientation similarity per rank
  double ap = 0;
  double aos = 0;
};

// KITTI 11-point interpolation over a ranked list (ignored detections
// already removed). AOS replaces each true positive's unit contribution with
// (1 + cos dtheta) / 2. No ground truth gives AP = AOS = 0.
inline PRCurve average_precision(const std::vector<RankedOutcome>& ranked, std::size_t gt_count) {
  PRCurve c;
  double tp = 0, sim = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (ranked[k].true_positive) {
      tp += 1;
      sim += 0.5 * (1.0 + std::cos(ranked[k].delta_yaw));
    }
    const double n = static_cast<double>(k + 1);
    const double recall = gt_count ? tp / static_cast<double>(gt_count) : 0.0;
    c.points.emplace_back(recall, tp / n);
    c.similarity.push_back(sim / n);
  }
  if (gt_count == 0) return c;
  for (int i = 0; i <= 10; ++i) {
    const double r = i / 10.0;
    double best_p = 0, best_s = 0;
    for (std::size_t k = 0; k < c.points.size(); ++k) {
      if (c.points[k].first >= r - 1e-12) {
        best_p = std::max(best_p, c.points[k].second);
        best_s = std::max(best_s, c.similarity[k]);
      }
    }
    c.ap += best_p;
    c.aos += best_s;
  }
  c.ap /= 11.0;
  c.aos /= 11.0;
  return c;
}

struct EvalFrame {
  std::string id;
  std::vector<Detection> detections;
  std::vector<ObjectLabel> ground_truth;
  Calibration calib;
};

// Pools the per-frame matches into one ranked list and scores it.
inline PRCurve evaluate(const std::vector<EvalFrame>& frames, const EvalConfig& cfg) {
  cfg.validate();
  struct Entry {
    Detection det;
    std::size_t frame, index;
    RankedOutcome outcome;
  };
  std::vector<Entry> pool;
  std::size_t gt_count = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    auto dets = frames[f].detections;
    std::stable_sort(dets.begin(), dets.end(), ranks_before);
    const auto m = match_detections(dets, frames[f].ground_truth, frames[f].calib, cfg);
    gt_count += m.evaluated_gt_count();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (m.detections[i] == MatchKind::ignored) continue;
      pool.push_back({dets[i], f, i, {m.detections[i] == MatchKind::true_positive, m.delta_yaw[i]}});
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
    if (a.det.score != b.det.score) return a.det.score > b.det.score;
    if (a.det.objectness_score != b.det.objectness_score) return a.det.objectness_score > b.det.objectness_score;
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.index < b.index;
  });
  std::vector<RankedOutcome> ranked;
  ranked.reserve(pool.size());
  for (const auto& e : pool) ranked.push_back(e.outcome);
  return average_precision(ranked, gt_count);
}

// ---------------------------------------------------------------------------
// Reports.

struct EvalTableEntry {
  Metric metric;
  Difficulty difficulty;
  double iou_threshold;
  PRCurve curve;
};

inline std::vector<EvalTableEntry> evaluate_table(const std::vector<EvalFrame>& frames, double iou_threshold,
                                                  const DifficultyRules& rules = {}) {
  std::vector<EvalTableEntry> out;
  for (Metric m : {Metric::image_plane, Metric::ground_plane}) {
    for (Difficulty d : {Difficulty::easy, Difficulty::moderate, Difficulty::hard}) {
      EvalConfig cfg;
      cfg.metric = m;
      cfg.difficulty = d;
      cfg.iou_threshold = iou_threshold;
      cfg.rules = rules;
      out.push_back({m, d, iou_threshold, evaluate(frames, cfg)});
    }
  }
  return out;
}

// Metric x {AP, AOS} rows against Easy / Moderate / Hard columns.
inline std::string format_report(const std::vector<EvalTableEntry>& table) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %9s %9s %9s\n", "", "Easy", "Moderate", "Hard");
  os << buf;
  for (Metric m : {Metric::image_plane, Metric::ground_plane}) {
    for (int aos = 0; aos < 2; ++aos) {
      double v[3] = {0, 0, 0};
      for (const auto& e : table)
        if (e.metric == m) v[static_cast<int>(e.difficulty)] = aos ? e.curve.aos : e.curve.ap;
      const std::string name = std::string(m == Metric::image_plane ? "Image Plane" : "Ground Plane") +
                               (aos ? " (AOS)" : " (AP)");
      std::snprintf(buf, sizeof buf, "%-22s %8.1f%% %8.1f%% %8.1f%%\n", name.c_str(), 100 * v[0], 100 * v[1],
                    100 * v[2]);
      os << buf;
    }
  }
  if (!table.empty()) {
    std::snprintf(buf, sizeof buf, "(IoU threshold %.2f)\n", table.front().iou_threshold);
    os << buf;
  }
  return os.str();
}

// key = value lines: ap/aos per entry and comma-separated recall, precision
// and similarity sequences.
inline std::string format_pr_dump(const std::vector<EvalTableEntry>& table) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& e : table) {
    const std::string key = std::string(to_string(e.metric)) + "." + to_string(e.difficulty);
    os << key << ".iou_threshold = " << e.iou_threshold << '\n';
    os << key << ".ap = " << e.curve.ap << '\n';
    os << key << ".aos = " << e.curve.aos << '\n';
    auto seq = [&](const char* name, auto get) {
      os << key << '.' << name << " =";
      for (std::size_t k = 0; k < e.curve.points.size(); ++k) os << (k ? "," : " ") << get(k);
      os << '\n';
    };
    seq("recall", [&](std::size_t k) { return e.curve.points[k].first; });
    seq("precision", [&](std::size_t k) { return e.curve.points[k].second; });
    seq("similarity", [&](std::size_t k) { return e.curve.similarity[k]; });
  }
  return os.str();
}

}  // namespace voxfcn
