// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Oriented boxes, their corner encoding, ground-plane footprints and
// polygon overlap. Shared by target generation, decoding, suppression and
// evaluation.

#include <array>
#include <vector>

#include "voxfcn/common.hpp"

namespace voxfcn {

// Sensor-frame box: x forward, y left, z up. Yaw rotates the length axis
// about +z, counterclockwise from +x.
struct OrientedBox3D {
  Vec3 center{0, 0, 0};
  Vec3 size{1, 1, 1};  // length, width, height
  double yaw = 0.0;

  bool valid() const { return size[0] > 0 && size[1] > 0 && size[2] > 0 && std::isfinite(yaw); }
};

using Corners = std::array<Vec3, 8>;

// Corner k has local coordinates (±l/2, ±w/2, ±h/2) where bit 0 of k selects
// the length sign, bit 1 the width sign, bit 2 the height sign; a clear bit
// means the positive half. Local points are rotated by yaw then translated.
inline Corners box_corners(const OrientedBox3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  Corners out{};
  for (int k = 0; k < 8; ++k) {
    const double lx = ((k & 1) ? -0.5 : 0.5) * box.size[0];
    const double ly = ((k & 2) ? -0.5 : 0.5) * box.size[1];
    const double lz = ((k & 4) ? -0.5 : 0.5) * box.size[2];
    out[k] = {box.center[0] + c * lx - s * ly, box.center[1] + s * lx + c * ly, box.center[2] + lz};
  }
  return out;
}

// Least-squares style box fit for predicted corners that need not form an
// exact cuboid. Edge pairs follow the bit layout of box_corners: (k, k|1) for
// k with bit 0 clear spans the length, likewise bit 1 width and bit 2 height.
// The yaw direction sums the length edges with the width edges rotated by
// -90 degrees. Exact inverse of box_corners on perfect cuboids.
inline OrientedBox3D corners_to_box(const Corners& corners) {
  Vec3 center{0, 0, 0};
  for (const auto& p : corners) center = center + p;
  center = (1.0 / 8.0) * center;
  double spread = 0;
  for (const auto& p : corners) spread = std::max(spread, norm(p - center));
  if (!(spread > 1e-12)) throw DegenerateBoxError("corners_to_box: all corners coincide");

  std::array<Vec3, 3> axis_sum{};
  for (int bit = 0; bit < 3; ++bit) {
    const int m = 1 << bit;
    for (int k = 0; k < 8; ++k)
      if (!(k & m)) axis_sum[bit] = axis_sum[bit] + (corners[k] - corners[k | m]);
  }
  const double ux = axis_sum[0][0] + axis_sum[1][1];
  const double uy = axis_sum[0][1] - axis_sum[1][0];
  const double yaw = (ux == 0 && uy == 0) ? 0.0 : std::atan2(uy, ux);
  const double c = std::cos(yaw), s = std::sin(yaw);

  // Mean edge length per axis, measured along the de-rotated axis.
  const double length = 0.25 * (c * axis_sum[0][0] + s * axis_sum[0][1]);
  const double width = 0.25 * (-s * axis_sum[1][0] + c * axis_sum[1][1]);
  const double height = 0.25 * axis_sum[2][2];
  constexpr double min_extent = 1e-6;
  OrientedBox3D box;
  box.center = center;
  box.size = {std::max(std::abs(length), min_extent), std::max(std::abs(width), min_extent),
              std::max(std::abs(height), min_extent)};
  box.yaw = normalize_angle(yaw);
  return box;
}

// ---------------------------------------------------------------------------
// 2D overlap.

struct Rect {
  double left = 0, top = 0, right = 0, bottom = 0;
  double area() const { return std::max(0.0, right - left) * std::max(0.0, bottom - top); }
};

using Polygon = std::vector<Vec2>;

// Counterclockwise footprint rectangle of the box on the ground plane.
inline Polygon ground_plane_polygon(const OrientedBox3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.size[0], hw = 0.5 * box.size[1];
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  Polygon out;
  out.reserve(4);
  for (const auto& p : local) out.push_back({box.center[0] + c * p[0] - s * p[1], box.center[1] + s * p[0] + c * p[1]});
  return out;
}

inline double polygon_area(const Polygon& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * a;
}

inline double iou_axis_aligned(const Rect& a, const Rect& b) {
  const double iw = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double ih = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Sutherland-Hodgman: clip `subject` by every edge of the convex CCW `clip`.
inline Polygon clip_convex(Polygon subject, const Polygon& clip) {
  auto side = [](const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
  };
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    Polygon next;
    next.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2& cur = subject[i];
      const Vec2& prev = subject[(i + subject.size() - 1) % subject.size()];
      const double sc = side(a, b, cur), sp = side(a, b, prev);
      const bool in_cur = sc >= 0, in_prev = sp >= 0;
      if (in_cur != in_prev) {
        const double t = sp / (sp - sc);
        next.push_back({prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])});
      }
      if (in_cur) next.push_back(cur);
    }
    subject = std::move(next);
  }
  return subject;
}

// Intersection over union of two convex counterclockwise polygons. A
// zero-area input yields 0.
inline double iou_rotated(const Polygon& a, const Polygon& b) {
  const double area_a = polygon_area(a), area_b = polygon_area(b);
  if (!(area_a > 0) || !(area_b > 0)) return 0.0;
  const Polygon inter_poly = clip_convex(a, b);
  const double inter = inter_poly.size() >= 3 ? std::max(0.0, polygon_area(inter_poly)) : 0.0;
  const double uni = area_a + area_b - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double ground_plane_iou(const OrientedBox3D& a, const OrientedBox3D& b) {
  return iou_rotated(ground_plane_polygon(a), ground_plane_polygon(b));
}

}  // namespace voxfcn
