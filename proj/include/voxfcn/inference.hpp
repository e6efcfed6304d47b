// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// From output maps to detections: every cell whose foreground probability
// clears a threshold decodes its 24 offsets into a candidate box, candidates
// are scored by how many candidates lie within a corner-distance radius, and
// a greedy pass keeps the best-scored box of each overlapping group.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"
#include "voxfcn/fcn3d.hpp"
#include "voxfcn/geometry.hpp"
#include "voxfcn/voxel.hpp"

namespace voxfcn {

struct Candidate {
  Corners corners{};
  CellIndex source_region{};
  double objectness_score = 0;
};

struct Detection {
  OrientedBox3D box;
  Corners corners{};
  int score = 1;  // neighbor count, self included
  double objectness_score = 0;
  CellIndex source_region{};
};

struct InferenceConfig {
  double threshold = 0.5;
  double neighbor_radius = 1.0;
  double overlap_threshold = 0.1;

  void validate() const {
    if (threshold < 0 || threshold > 1) throw ConfigError("inference.threshold must be in [0, 1]");
    if (!(neighbor_radius >= 0)) throw ConfigError("inference.neighbor_radius must be >= 0");
    if (overlap_threshold < 0 || overlap_threshold > 1) throw ConfigError("inference.overlap_threshold must be in [0, 1]");
  }
};

// Inverse of the corner-offset encoding: corners = offsets + region center.
inline Corners decode_corners(const Tensor& boxmap, std::size_t flat, const GridSpec& spec) {
  const std::size_t n = spec.cell_count();
  const Vec3 p = region_center(spec.unflat(flat), spec);
  Corners c{};
  for (int k = 0; k < 8; ++k)
    for (int a = 0; a < 3; ++a) c[k][a] = static_cast<double>(boxmap[(3 * k + a) * n + flat]) + p[a];
  return c;
}

inline std::vector<Candidate> extract_candidates(const OutputMaps& maps, const GridSpec& spec, double threshold) {
  const std::size_t n = spec.cell_count();
  if (maps.objectness.size() != 2 * n || maps.boxmap.size() != kOffsetDims * n) {
    throw DimensionError("extract_candidates: maps do not match grid " + shape_string({spec.dims.begin(), spec.dims.end()}));
  }
  std::vector<Candidate> out;
  for (std::size_t f = 0; f < n; ++f) {
    const double p = foreground_probability(maps.objectness[f], maps.objectness[n + f]);
    if (p < threshold) continue;
    out.push_back({decode_corners(maps.boxmap, f, spec), spec.unflat(f), p});
  }
  return out;
}

inline double mean_corner_distance(const Corners& a, const Corners& b) {
  double s = 0;
  for (int k = 0; k < 8; ++k) s += norm(a[k] - b[k]);
  return s / 8.0;
}

// Candidates whose corners coincide cannot be fitted and are dropped.
inline std::vector<Detection> score_candidates(const std::vector<Candidate>& cands, double neighbor_radius) {
  std::vector<int> counts(cands.size(), 0);
  parallel_for(cands.size(), [&](std::size_t i) {
    int c = 0;
    for (std::size_t j = 0; j < cands.size(); ++j)
      if (mean_corner_distance(cands[i].corners, cands[j].corners) <= neighbor_radius) ++c;
    counts[i] = c;
  });
  std::vector<Detection> out;
  out.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    Detection d;
    try {
      d.box = corners_to_box(cands[i].corners);
    } catch (const DegenerateBoxError&) {
      continue;
    }
    d.corners = cands[i].corners;
    d.score = std::max(1, counts[i]);
    d.objectness_score = cands[i].objectness_score;
    d.source_region = cands[i].source_region;
    out.push_back(d);
  }
  return out;
}

// Ranking used by suppression and evaluation: neighbor count, then
// objectness, then the lowest source region.
inline bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.objectness_score != b.objectness_score) return a.objectness_score > b.objectness_score;
  return a.source_region < b.source_region;
}

inline std::vector<Detection> suppress(std::vector<Detection> dets, double overlap_threshold) {
  std::stable_sort(dets.begin(), dets.end(), ranks_before);
  std::vector<Polygon> polys;
  polys.reserve(dets.size());
  for (const auto& d : dets) polys.push_back(ground_plane_polygon(d.box));
  std::vector<char> removed(dets.size(), 0);
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j)
      if (!removed[j] && iou_rotated(polys[i], polys[j]) > overlap_threshold) removed[j] = 1;
  }
  return kept;
}

struct DetectionResult {
  std::vector<Candidate> candidates;
  std::vector<Detection> detections;
};

inline DetectionResult detect(const OutputMaps& maps, const GridSpec& spec, const InferenceConfig& cfg) {
  cfg.validate();
  DetectionResult r;
  r.candidates = extract_candidates(maps, spec, cfg.threshold);
  r.detections = suppress(score_candidates(r.candidates, cfg.neighbor_radius), cfg.overlap_threshold);
  return r;
}

// ---------------------------------------------------------------------------
// Detection files. One detection per line, whitespace separated:
//   scene_id  c0x c0y c0z ... c7x c7y c7z  cx cy cz  length width height  yaw
//   neighbor_score  objectness_score
// Corner order follows box_corners. Candidate dumps use:
//   scene_id  i j k  c0x ... c7z  objectness_score

inline std::string format_detection_line(const std::string& scene_id, const Detection& d) {
  std::ostringstream os;
  char buf[48];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.6f", v);
    os << buf;
  };
  os << scene_id;
  for (const auto& c : d.corners)
    for (double v : c) put(v);
  for (double v : d.box.center) put(v);
  for (double v : d.box.size) put(v);
  put(d.box.yaw);
  os << ' ' << d.score;
  put(d.objectness_score);
  return os.str();
}

inline std::string format_candidate_line(const std::string& scene_id, const Candidate& c) {
  std::ostringstream os;
  char buf[48];
  os << scene_id << ' ' << c.source_region[0] << ' ' << c.source_region[1] << ' ' << c.source_region[2];
  for (const auto& p : c.corners)
    for (double v : p) {
      std::snprintf(buf, sizeof buf, " %.6f", v);
      os << buf;
    }
  std::snprintf(buf, sizeof buf, " %.6f", c.objectness_score);
  os << buf;
  return os.str();
}

struct SceneDetection {
  std::string scene_id;
  Detection detection;
};

inline std::vector<SceneDetection> read_detection_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detection file: " + path.string());
  std::vector<SceneDetection> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    SceneDetection sd;
    std::vector<double> v;
    ss >> sd.scene_id;
    for (double x; ss >> x;) v.push_back(x);
    if (!ss.eof() || v.size() != 33) {
      throw ParseError("detection line " + std::to_string(n) + ": expected scene id and 33 numbers");
    }
    auto& d = sd.detection;
    for (int k = 0; k < 8; ++k)
      for (int a = 0; a < 3; ++a) d.corners[k][a] = v[3 * k + a];
    d.box.center = {v[24], v[25], v[26]};
    d.box.size = {v[27], v[28], v[29]};
    d.box.yaw = v[30];
    d.score = static_cast<int>(v[31]);
    d.objectness_score = v[32];
    out.push_back(std::move(sd));
  }
  return out;
}

}  // namespace voxfcn
