// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Occupancy voxelization and training-target generation.
//
// Grid axis 0 runs along sensor x, axis 1 along y, axis 2 along z. A cell
// (i, j, k) covers the half-open cube [origin + idx*s, origin + (idx+1)*s).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"
#include "voxfcn/geometry.hpp"
#include "voxfcn/io_kitti.hpp"
#include "voxfcn/tensor_nn.hpp"

namespace voxfcn {

using CellIndex = std::array<std::size_t, 3>;

struct GridSpec {
  Vec3 origin{0.0, -25.6, -3.2};
  double voxel_size = 0.2;
  std::array<std::size_t, 3> dims{256, 256, 32};

  std::size_t cell_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t flat(const CellIndex& c) const { return (c[0] * dims[1] + c[1]) * dims[2] + c[2]; }
  CellIndex unflat(std::size_t f) const { return {f / (dims[1] * dims[2]), (f / dims[2]) % dims[1], f % dims[2]}; }

  void validate() const {
    if (!(voxel_size > 0)) throw ConfigError("grid.voxel_size must be > 0");
    for (std::size_t d : dims) {
      if (d == 0 || d % 8 != 0) throw ConfigError("grid.dims must be positive multiples of 8");
    }
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Default synthetic-scene grid: 64 x 64 x 16 cells of 0.4 m.
inline GridSpec synthetic_grid() { return GridSpec{{0.0, -12.8, -3.2}, 0.4, {64, 64, 16}}; }

struct VoxelGrid {
  GridSpec spec;
  Tensor data;  // 1 x L x W x H, values in {0, 1}
};

inline Vec3 region_center(const CellIndex& idx, const GridSpec& spec) {
  for (int a = 0; a < 3; ++a) {
    if (idx[a] >= spec.dims[a]) {
      throw DimensionError("region_center: index " + std::to_string(idx[a]) + " out of range on axis " +
                           std::to_string(a));
    }
  }
  return {spec.origin[0] + (static_cast<double>(idx[0]) + 0.5) * spec.voxel_size,
          spec.origin[1] + (static_cast<double>(idx[1]) + 0.5) * spec.voxel_size,
          spec.origin[2] + (static_cast<double>(idx[2]) + 0.5) * spec.voxel_size};
}

// Cell containing a world point, or false when outside the grid.
inline bool cell_of(const Vec3& p, const GridSpec& spec, CellIndex& out) {
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - spec.origin[a]) / spec.voxel_size);
    if (!(f >= 0) || f >= static_cast<double>(spec.dims[a])) return false;
    out[a] = static_cast<std::size_t>(f);
  }
  return true;
}

inline VoxelGrid voxelize(const PointCloud& cloud, const GridSpec& spec) {
  spec.validate();
  VoxelGrid g{spec, Tensor({1, spec.dims[0], spec.dims[1], spec.dims[2]})};
  CellIndex c{};
  for (const auto& p : cloud.points) {
    if (cell_of({p.x, p.y, p.z}, spec, c)) g.data[spec.flat(c)] = 1.0f;
  }
  return g;
}

// ---------------------------------------------------------------------------

enum class CellLabel : std::uint8_t { negative = 0, positive = 1, ignore = 2 };

inline constexpr std::size_t kOffsetDims = 24;
using OffsetVector = std::array<float, kOffsetDims>;

// Per-cell objectness labels plus corner offsets on the positive cells.
// Offsets are stored sparsely: `offsets[n]` belongs to `positive_cells[n]`.
struct TargetVolume {
  GridSpec spec;
  std::vector<CellLabel> labels;            // one per cell
  std::vector<std::size_t> positive_cells;  // ascending flat indices
  std::vector<OffsetVector> offsets;
  std::vector<std::size_t> positive_object;  // index into the scene's label list

  std::size_t region_count() const {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                  [](CellLabel l) { return l != CellLabel::ignore; }));
  }

  // Dense 24 x L x W x H view; zero off the positive set.
  Tensor dense_offsets() const {
    Tensor t({kOffsetDims, spec.dims[0], spec.dims[1], spec.dims[2]});
    const std::size_t n = spec.cell_count();
    for (std::size_t p = 0; p < positive_cells.size(); ++p)
      for (std::size_t c = 0; c < kOffsetDims; ++c) t[c * n + positive_cells[p]] = offsets[p][c];
    return t;
  }
};

// Offsets from a point to the 8 box corners, stacked in box_corners order.
inline std::array<double, kOffsetDims> corner_offsets(const OrientedBox3D& box, const Vec3& p) {
  const auto corners = box_corners(box);
  std::array<double, kOffsetDims> out{};
  for (int k = 0; k < 8; ++k)
    for (int a = 0; a < 3; ++a) out[3 * k + a] = corners[k][a] - p[a];
  return out;
}

inline bool point_in_box(const Vec3& p, const OrientedBox3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec3 d = p - b.center;
  const double lx = c * d[0] + s * d[1];
  const double ly = -s * d[0] + c * d[1];
  return std::abs(lx) <= 0.5 * b.size[0] && std::abs(ly) <= 0.5 * b.size[1] && std::abs(d[2]) <= 0.5 * b.size[2];
}

inline bool is_positive_class(const std::string& name) { return name == "Car"; }
inline bool is_ignored_class(const std::string& name) { return name == "Van" || name == "Truck"; }

inline double sphere_radius(const OrientedBox3D& box, double fraction) {
  return fraction * std::min(box.size[0], box.size[1]);
}

// Cars mark cells whose center lies within the center sphere as positive;
// Van/Truck mark cells inside their box as ignore; the rest is negative.
// A cell inside several spheres takes the nearest object.
inline TargetVolume generate_targets(const std::vector<ObjectLabel>& labels, const Calibration& calib,
                                     const GridSpec& spec, double sphere_radius_fraction) {
  spec.validate();
  TargetVolume t;
  t.spec = spec;
  t.labels.assign(spec.cell_count(), CellLabel::negative);

  std::vector<OrientedBox3D> boxes;
  boxes.reserve(labels.size());
  for (const auto& l : labels) boxes.push_back(label_to_box(l, calib));

  // Visit only the cells whose centers can fall inside a ball of the given radius.
  auto for_cells_near = [&](const Vec3& c, double r, auto&& fn) {
    std::array<long, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0L, static_cast<long>(std::floor((c[a] - r - spec.origin[a]) / spec.voxel_size - 0.5)));
      hi[a] = std::min(static_cast<long>(spec.dims[a]) - 1,
                       static_cast<long>(std::ceil((c[a] + r - spec.origin[a]) / spec.voxel_size - 0.5)));
    }
    for (long i = lo[0]; i <= hi[0]; ++i)
      for (long j = lo[1]; j <= hi[1]; ++j)
        for (long k = lo[2]; k <= hi[2]; ++k) {
          const CellIndex idx{static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k)};
          fn(idx, region_center(idx, spec));
        }
  };

  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (!is_ignored_class(labels[n].class_name)) continue;
    const auto& b = boxes[n];
    const double reach = 0.5 * std::sqrt(b.size[0] * b.size[0] + b.size[1] * b.size[1] + b.size[2] * b.size[2]);
    for_cells_near(b.center, reach, [&](const CellIndex& idx, const Vec3& p) {
      if (point_in_box(p, b)) t.labels[spec.flat(idx)] = CellLabel::ignore;
    });
  }

  std::vector<std::size_t> owner(spec.cell_count(), SIZE_MAX);
  std::vector<double> owner_dist(spec.cell_count(), 0.0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (!is_positive_class(labels[n].class_name)) continue;
    const auto& b = boxes[n];
    const double r = sphere_radius(b, sphere_radius_fraction);
    for_cells_near(b.center, r, [&](const CellIndex& idx, const Vec3& p) {
      const double d = norm(p - b.center);
      if (d > r) return;
      const std::size_t f = spec.flat(idx);
      if (owner[f] == SIZE_MAX || d < owner_dist[f]) {
        owner[f] = n;
        owner_dist[f] = d;
      }
    });
  }

  for (std::size_t f = 0; f < owner.size(); ++f) {
    if (owner[f] == SIZE_MAX) continue;
    t.labels[f] = CellLabel::positive;
    t.positive_cells.push_back(f);
    t.positive_object.push_back(owner[f]);
    const auto off = corner_offsets(boxes[owner[f]], region_center(spec.unflat(f), spec));
    OffsetVector v{};
    for (std::size_t c = 0; c < kOffsetDims; ++c) v[c] = static_cast<float>(off[c]);
    t.offsets.push_back(v);
  }
  return t;
}

}  // namespace voxfcn
