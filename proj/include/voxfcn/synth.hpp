// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Deterministic synthetic lidar scenes: box-shaped vehicles sampled on the
// faces visible from the sensor, a noisy ground plane and unlabeled clutter,
// written out in the KITTI trio layout.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"
#include "voxfcn/geometry.hpp"
#include "voxfcn/io_kitti.hpp"
#include "voxfcn/voxel.hpp"

namespace voxfcn {

struct Range {
  double lo = 0, hi = 0;
};

struct SceneSpec {
  int n_vehicles_min = 1;
  int n_vehicles_max = 3;
  Range x{3.0, 23.0};
  Range y{-10.5, 10.5};
  Range length{3.5, 4.5};
  Range width{1.6, 1.9};
  Range height{1.4, 1.7};
  Range yaw{-std::numbers::pi / 3, std::numbers::pi / 3};
  double points_per_m2 = 20.0;        // vehicle and clutter surfaces
  double ground_points_per_m2 = 2.0;
  double ground_level = -1.7;
  double ground_noise_sigma = 0.02;
  double surface_noise_sigma = 0.01;
  int clutter_count = 3;
  double min_gap = 0.5;               // footprint clearance between objects
  std::uint64_t seed = 1;
  GridSpec grid = synthetic_grid();   // every box must fit inside

  void validate() const {
    if (n_vehicles_min < 0 || n_vehicles_max < n_vehicles_min) throw ConfigError("synth: bad vehicle count range");
    for (const Range* r : {&x, &y, &length, &width, &height, &yaw})
      if (r->hi < r->lo) throw ConfigError("synth: range with hi < lo");
    if (length.lo <= 0 || width.lo <= 0 || height.lo <= 0) throw ConfigError("synth: vehicle sizes must be positive");
    if (points_per_m2 < 0 || ground_points_per_m2 < 0 || ground_noise_sigma < 0 || surface_noise_sigma < 0 ||
        clutter_count < 0 || min_gap < 0) {
      throw ConfigError("synth: densities, noise levels and counts must be non-negative");
    }
    grid.validate();
  }
};

// Fixed pinhole with KITTI-like intrinsics; camera x = -sensor y,
// camera y = -sensor z, camera z = sensor x.
inline Calibration synthetic_calibration() {
  Calibration c;
  c.velo_to_cam = {{{0, -1, 0, 0}, {0, 0, -1, -0.08}, {1, 0, 0, -0.27}, {0, 0, 0, 1}}};
  c.cam_projection = {{{721.5377, 0, 609.5593, 0}, {0, 721.5377, 172.854, 0}, {0, 0, 1, 0}}};
  c.image_size = {1242, 375};
  return c;
}

struct SyntheticScene {
  PointCloud cloud;
  std::vector<ObjectLabel> labels;
  Calibration calib;
  std::vector<OrientedBox3D> vehicles;
  std::vector<OrientedBox3D> clutter;
  // Noise-free position of every emitted point and its source: vehicle index,
  // -1 ground, -2 clutter.
  std::vector<Vec3> exact_points;
  std::vector<int> source;
};

namespace detail {

struct Face {
  Vec3 center, normal, u, v;  // u, v: half-extent edge vectors
};

inline std::array<Face, 6> box_faces(const OrientedBox3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec3 ax{c, s, 0}, ay{-s, c, 0}, az{0, 0, 1};
  const Vec3 hx = (0.5 * b.size[0]) * ax, hy = (0.5 * b.size[1]) * ay, hz = (0.5 * b.size[2]) * az;
  return {{{b.center + hx, ax, hy, hz},
           {b.center - hx, -1.0 * ax, hy, hz},
           {b.center + hy, ay, hx, hz},
           {b.center - hy, -1.0 * ay, hx, hz},
           {b.center + hz, az, hx, hy},
           {b.center - hz, -1.0 * az, hx, hy}}};
}

// Faces whose outward normal points toward the sensor at the origin.
inline bool face_visible(const Face& f) { return dot(f.normal, f.center) < 0; }

inline bool box_in_grid(const OrientedBox3D& b, const GridSpec& g) {
  for (const auto& p : box_corners(b)) {
    for (int a = 0; a < 3; ++a) {
      const double lo = g.origin[a], hi = g.origin[a] + g.voxel_size * static_cast<double>(g.dims[a]);
      if (!(p[a] >= lo && p[a] < hi)) return false;
    }
  }
  return true;
}

inline bool footprint_overlaps(const OrientedBox3D& a, const std::vector<OrientedBox3D>& others, double gap) {
  OrientedBox3D grown = a;
  grown.size[0] += gap;
  grown.size[1] += gap;
  for (const auto& o : others)
    if (ground_plane_iou(grown, o) > 0) return true;
  return false;
}

}  // namespace detail

inline SyntheticScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uni = [&](const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
  std::normal_distribution<double> unit_normal(0.0, 1.0);

  SyntheticScene sc;
  sc.calib = synthetic_calibration();
  const int n = std::uniform_int_distribution<int>(spec.n_vehicles_min, spec.n_vehicles_max)(rng);

  constexpr int kMaxAttempts = 10000;
  int attempts = 0;
  auto place = [&](const Range& len, const Range& wid, const Range& hei, std::vector<OrientedBox3D>& into) {
    while (true) {
      if (++attempts > kMaxAttempts) {
        throw InfeasibleSpecError("synth: could not place non-overlapping objects after " +
                                  std::to_string(kMaxAttempts) + " attempts");
      }
      OrientedBox3D b;
      b.size = {uni(len), uni(wid), uni(hei)};
      b.center = {uni(spec.x), uni(spec.y), spec.ground_level + 0.5 * b.size[2]};
      b.yaw = normalize_angle(uni(spec.yaw));
      if (!detail::box_in_grid(b, spec.grid)) continue;
      if (detail::footprint_overlaps(b, sc.vehicles, spec.min_gap) ||
          detail::footprint_overlaps(b, sc.clutter, spec.min_gap)) {
        continue;
      }
      into.push_back(b);
      return;
    }
  };
  for (int i = 0; i < n; ++i) place(spec.length, spec.width, spec.height, sc.vehicles);
  for (int i = 0; i < spec.clutter_count; ++i) {
    place(Range{0.2, 1.0}, Range{0.2, 1.0}, Range{0.5, 2.5}, sc.clutter);
    sc.clutter.back().yaw = 0.0;  // yaw is irrelevant for clutter; keep it canonical
  }

  auto emit_surface = [&](const OrientedBox3D& b, int source) {
    for (const auto& f : detail::box_faces(b)) {
      if (!detail::face_visible(f)) continue;
      const double area = 4.0 * norm(f.u) * norm(f.v);
      const auto count = static_cast<int>(std::lround(spec.points_per_m2 * area));
      for (int k = 0; k < count; ++k) {
        const double a = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        const double c = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        const Vec3 p = f.center + a * f.u + c * f.v;
        sc.exact_points.push_back(p);
        sc.source.push_back(source);
      }
    }
  };
  for (std::size_t i = 0; i < sc.vehicles.size(); ++i) emit_surface(sc.vehicles[i], static_cast<int>(i));
  for (const auto& b : sc.clutter) emit_surface(b, -2);

  // Ground over the grid footprint, skipping what objects stand on.
  const auto& g = spec.grid;
  const double gx0 = g.origin[0], gy0 = g.origin[1];
  const double gx1 = gx0 + g.voxel_size * static_cast<double>(g.dims[0]);
  const double gy1 = gy0 + g.voxel_size * static_cast<double>(g.dims[1]);
  const auto ground_count = static_cast<long>(std::lround(spec.ground_points_per_m2 * (gx1 - gx0) * (gy1 - gy0)));
  for (long k = 0; k < ground_count; ++k) {
    const Vec3 p{std::uniform_real_distribution<double>(gx0, gx1)(rng),
                 std::uniform_real_distribution<double>(gy0, gy1)(rng), spec.ground_level};
    bool covered = false;
    for (const auto* set : {&sc.vehicles, &sc.clutter})
      for (const auto& b : *set) {
        OrientedBox3D flat = b;
        flat.center[2] = spec.ground_level;
        if (point_in_box(p, flat)) covered = true;
      }
    if (covered) continue;
    sc.exact_points.push_back(p);
    sc.source.push_back(-1);
  }

  sc.cloud.points.reserve(sc.exact_points.size());
  for (std::size_t k = 0; k < sc.exact_points.size(); ++k) {
    Vec3 p = sc.exact_points[k];
    if (sc.source[k] == -1) {
      if (spec.ground_noise_sigma > 0) p[2] += spec.ground_noise_sigma * unit_normal(rng);
    } else if (spec.surface_noise_sigma > 0) {
      for (int a = 0; a < 3; ++a) p[a] += spec.surface_noise_sigma * unit_normal(rng);
    }
    sc.cloud.points.push_back({static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2]), 0.0f});
  }

  for (const auto& b : sc.vehicles) {
    ObjectLabel l = box_to_label(b, sc.calib, "Car");
    const auto corners = box_corners(b);
    const auto proj = project_points(std::span<const Vec3>(corners.data(), corners.size()), sc.calib);
    Rect full{1e300, 1e300, -1e300, -1e300};
    bool all_front = true;
    for (const auto& p : proj) {
      all_front = all_front && p.in_front;
      full.left = std::min(full.left, p.u);
      full.right = std::max(full.right, p.u);
      full.top = std::min(full.top, p.v);
      full.bottom = std::max(full.bottom, p.v);
    }
    Rect clipped = full;
    clipped.left = std::clamp(full.left, 0.0, static_cast<double>(sc.calib.image_size[0]));
    clipped.right = std::clamp(full.right, 0.0, static_cast<double>(sc.calib.image_size[0]));
    clipped.top = std::clamp(full.top, 0.0, static_cast<double>(sc.calib.image_size[1]));
    clipped.bottom = std::clamp(full.bottom, 0.0, static_cast<double>(sc.calib.image_size[1]));
    l.bbox2d = clipped;
    l.truncation = (all_front && full.area() > 0) ? std::clamp(1.0 - clipped.area() / full.area(), 0.0, 1.0) : 1.0;
    l.occlusion = 0;
    sc.labels.push_back(l);
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Dataset layout: <dir>/velodyne/<id>.bin, <dir>/label_2/<id>.txt,
// <dir>/calib/<id>.txt and <dir>/index.txt listing ids one per line.

inline std::string scene_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

inline void write_scene(const std::filesystem::path& dir, const std::string& id, const SyntheticScene& sc) {
  write_velodyne_bin(sc.cloud, dir / "velodyne" / (id + ".bin"));
  write_label_file(sc.labels, dir / "label_2" / (id + ".txt"));
  write_calib(sc.calib, dir / "calib" / (id + ".txt"));
}

inline void make_dataset_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  for (const char* sub : {"velodyne", "label_2", "calib"}) {
    std::filesystem::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }
}

// Scene i of a dataset uses seed base + i.
inline std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& dir, const SceneSpec& base,
                                                        std::size_t count) {
  make_dataset_dirs(dir);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec s = base;
    s.seed = base.seed + i;
    ids.push_back(scene_id(i));
    write_scene(dir, ids.back(), generate_scene(s));
  }
  std::ofstream idx(dir / "index.txt", std::ios::trunc);
  if (!idx) throw IoError("cannot write index: " + (dir / "index.txt").string());
  for (const auto& id : ids) idx << id << '\n';
  return ids;
}

// Ids from index.txt, or the sorted velodyne/*.bin stems when it is absent.
inline std::vector<std::string> read_dataset_index(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::string> ids;
  if (std::ifstream idx(dir / "index.txt"); idx) {
    for (std::string line; std::getline(idx, line);) {
      line.erase(line.find_last_not_of(" \t\r") + 1);
      if (!line.empty()) ids.push_back(line);
    }
    return ids;
  }
  if (!std::filesystem::is_directory(dir / "velodyne")) throw IoError("no index.txt or velodyne/ in " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir / "velodyne"))
    if (e.path().extension() == ".bin") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace voxfcn
