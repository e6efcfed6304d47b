// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Readers and writers for the KITTI object-detection trio: velodyne scans
// (.bin), object labels (.txt) and calibration (.txt). Also the camera
// projection and the camera <-> sensor frame conversion of labels.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"
#include "voxfcn/geometry.hpp"

namespace voxfcn {

static_assert(std::endian::native == std::endian::little, "velodyne decoding assumes a little-endian host");

struct LidarPoint {
  float x = 0, y = 0, z = 0;
  float intensity = 0;
  friend bool operator==(const LidarPoint&, const LidarPoint&) = default;
};

struct PointCloud {
  std::vector<LidarPoint> points;
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

struct ObjectLabel {
  std::string class_name;
  double truncation = 0;
  int occlusion = 0;
  double alpha = 0;
  Rect bbox2d;                 // left, top, right, bottom (pixels)
  Vec3 size{0, 0, 0};          // height, width, length (KITTI order)
  Vec3 location{0, 0, 0};      // bottom center, camera frame
  double yaw = 0;              // rotation_y about the camera y axis
  double score = 0;            // optional 16th column (detections); unused for ground truth
};

using Mat4 = std::array<std::array<double, 4>, 4>;
using Mat34 = std::array<std::array<double, 4>, 3>;

struct Calibration {
  Mat4 velo_to_cam{};     // sensor -> (rectified) camera, bottom row (0,0,0,1)
  Mat34 cam_projection{};  // P2
  std::array<int, 2> image_size{1242, 375};
};

inline Mat4 identity4() {
  Mat4 m{};
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

inline Mat4 matmul(const Mat4& a, const Mat4& b) {
  Mat4 r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

// Inverse of a rigid transform [R t; 0 1].
inline Mat4 rigid_inverse(const Mat4& m) {
  Mat4 r = identity4();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m[j][i];
  for (int i = 0; i < 3; ++i) r[i][3] = -(r[i][0] * m[0][3] + r[i][1] * m[1][3] + r[i][2] * m[2][3]);
  return r;
}

inline Vec3 transform_point(const Mat4& m, const Vec3& p) {
  Vec3 r{};
  for (int i = 0; i < 3; ++i) r[i] = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
  return r;
}

inline Vec3 transform_direction(const Mat4& m, const Vec3& d) {
  Vec3 r{};
  for (int i = 0; i < 3; ++i) r[i] = m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2];
  return r;
}

// ---------------------------------------------------------------------------
// Velodyne scans: 4 little-endian float32 per point (x, y, z, intensity).

inline PointCloud read_velodyne_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open velodyne file: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  if (bytes.size() % 16 != 0) {
    throw MalformedFileError("velodyne file length " + std::to_string(bytes.size()) +
                             " is not a multiple of 16: " + path.string());
  }
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    float v[4];
    std::memcpy(v, bytes.data() + 16 * i, 16);
    cloud.points[i] = {v[0], v[1], v[2], v[3]};
  }
  return cloud;
}

inline void write_velodyne_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write velodyne file: " + path.string());
  for (const auto& p : cloud.points) {
    const float v[4] = {p.x, p.y, p.z, p.intensity};
    out.write(reinterpret_cast<const char*>(v), 16);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Labels: type truncated occluded alpha left top right bottom h w l x y z ry [score]

inline ObjectLabel parse_label_line(const std::string& line, std::size_t line_no) {
  std::istringstream ss(line);
  std::vector<std::string> tok;
  for (std::string t; ss >> t;) tok.push_back(t);
  if (tok.size() != 15 && tok.size() != 16) {
    throw ParseError("label line " + std::to_string(line_no) + ": expected 15 fields, got " +
                     std::to_string(tok.size()));
  }
  auto num = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok[i], &used);
      if (used != tok[i].size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ParseError("label line " + std::to_string(line_no) + ": field " + std::to_string(i + 1) +
                       " is not a number: '" + tok[i] + "'");
    }
  };
  ObjectLabel l;
  l.class_name = tok[0];
  l.truncation = num(1);
  l.occlusion = static_cast<int>(num(2));
  l.alpha = num(3);
  l.bbox2d = {num(4), num(5), num(6), num(7)};
  l.size = {num(8), num(9), num(10)};
  l.location = {num(11), num(12), num(13)};
  l.yaw = num(14);
  if (tok.size() == 16) l.score = num(15);
  return l;
}

inline std::vector<ObjectLabel> parse_label_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file: " + path.string());
  std::vector<ObjectLabel> labels;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    labels.push_back(parse_label_line(line, n));
  }
  return labels;
}

inline std::string format_label_line(const ObjectLabel& l) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s %.2f %d %.6f %.2f %.2f %.2f %.2f %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                l.class_name.c_str(), l.truncation, l.occlusion, l.alpha, l.bbox2d.left, l.bbox2d.top,
                l.bbox2d.right, l.bbox2d.bottom, l.size[0], l.size[1], l.size[2], l.location[0], l.location[1],
                l.location[2], l.yaw);
  return buf;
}

inline void write_label_file(const std::vector<ObjectLabel>& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write label file: " + path.string());
  for (const auto& l : labels) out << format_label_line(l) << '\n';
}

// ---------------------------------------------------------------------------
// Calibration. Keys other than P2, R0_rect, Tr_velo_to_cam and image_size are
// ignored. R0_rect, when present, is folded into velo_to_cam so labels in the
// rectified camera frame map straight to the sensor frame.

inline Calibration parse_calib(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open calibration file: " + path.string());
  std::map<std::string, std::vector<double>> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t\r") + 1);
    std::istringstream ss(line.substr(colon + 1));
    std::vector<double> vals;
    for (std::string t; ss >> t;) {
      try {
        vals.push_back(std::stod(t));
      } catch (const std::exception&) {
        throw ParseError("calib line " + std::to_string(n) + ": non-numeric value '" + t + "'");
      }
    }
    rows[key] = std::move(vals);
  }
  auto need = [&](const std::string& key, std::size_t count) -> const std::vector<double>& {
    const auto it = rows.find(key);
    if (it == rows.end()) throw ParseError("calib: missing key " + key);
    if (it->second.size() != count) {
      throw ParseError("calib: " + key + " has " + std::to_string(it->second.size()) + " values, expected " +
                       std::to_string(count));
    }
    return it->second;
  };

  Calibration c;
  const auto& p2 = need("P2", 12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) c.cam_projection[i][j] = p2[4 * i + j];
  const auto& tr = need("Tr_velo_to_cam", 12);
  Mat4 t = identity4();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) t[i][j] = tr[4 * i + j];
  if (rows.count("R0_rect")) {
    const auto& r0 = need("R0_rect", 9);
    Mat4 r = identity4();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r[i][j] = r0[3 * i + j];
    t = matmul(r, t);
  }
  c.velo_to_cam = t;
  if (rows.count("image_size")) {
    const auto& sz = need("image_size", 2);
    c.image_size = {static_cast<int>(sz[0]), static_cast<int>(sz[1])};
  }
  return c;
}

inline void write_calib(const Calibration& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write calibration file: " + path.string());
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.12e", v);
    out << buf;
  };
  out << "P2:";
  for (const auto& row : c.cam_projection)
    for (double v : row) put(v);
  out << "\nR0_rect:";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) put(i == j ? 1.0 : 0.0);
  out << "\nTr_velo_to_cam:";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) put(c.velo_to_cam[i][j]);
  out << "\nimage_size: " << c.image_size[0] << ' ' << c.image_size[1] << '\n';
}

// ---------------------------------------------------------------------------

struct Projection {
  double u = 0, v = 0;
  double depth = 0;  // camera-frame z
  bool in_front = false;
};

// Points behind the camera (depth <= 0) are returned flagged, not dropped.
inline std::vector<Projection> project_points(std::span<const Vec3> points, const Calibration& calib) {
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Vec3 cam = transform_point(calib.velo_to_cam, p);
    double h[3];
    for (int i = 0; i < 3; ++i) {
      const auto& r = calib.cam_projection[i];
      h[i] = r[0] * cam[0] + r[1] * cam[1] + r[2] * cam[2] + r[3];
    }
    Projection pr;
    pr.depth = cam[2];
    pr.in_front = cam[2] > 0;
    if (h[2] != 0) {
      pr.u = h[0] / h[2];
      pr.v = h[1] / h[2];
    }
    out.push_back(pr);
  }
  return out;
}

// Camera-frame KITTI label -> sensor-frame box. The label location is the
// bottom-face center and the camera y axis points down.
inline OrientedBox3D label_to_box(const ObjectLabel& l, const Calibration& calib) {
  const Mat4 cam_to_velo = rigid_inverse(calib.velo_to_cam);
  const Vec3 cam_center{l.location[0], l.location[1] - 0.5 * l.size[0], l.location[2]};
  const Vec3 length_dir_cam{std::cos(l.yaw), 0.0, -std::sin(l.yaw)};
  const Vec3 d = transform_direction(cam_to_velo, length_dir_cam);
  OrientedBox3D b;
  b.center = transform_point(cam_to_velo, cam_center);
  b.size = {l.size[2], l.size[1], l.size[0]};
  b.yaw = normalize_angle(std::atan2(d[1], d[0]));
  return b;
}

// Sensor-frame box -> camera-frame label geometry (location, size, rotation_y,
// alpha). The 2D box and the class fields are left for the caller.
inline ObjectLabel box_to_label(const OrientedBox3D& b, const Calibration& calib, const std::string& class_name) {
  ObjectLabel l;
  l.class_name = class_name;
  const Vec3 c = transform_point(calib.velo_to_cam, b.center);
  const Vec3 d = transform_direction(calib.velo_to_cam, {std::cos(b.yaw), std::sin(b.yaw), 0.0});
  l.size = {b.size[2], b.size[1], b.size[0]};
  l.location = {c[0], c[1] + 0.5 * b.size[2], c[2]};
  l.yaw = normalize_angle(std::atan2(-d[2], d[0]));
  l.alpha = normalize_angle(l.yaw - std::atan2(c[0], c[2]));
  return l;
}

}  // namespace voxfcn
