// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reference implementations and fixtures shared by the test binaries. The
// references are deliberately naive so they can serve as oracles.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "voxfcn/geometry.hpp"
#include "voxfcn/tensor_nn.hpp"

namespace voxfcn::testing {

class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("voxfcn_test_" + std::to_string(rd()) + "_" + std::to_string(++counter));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

template <typename T>
void fill_random(BasicTensor<T>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
}

// Six nested loops (plus channels) straight from the cross-correlation definition.
template <typename T>
BasicTensor<double> naive_conv3d(const BasicTensor<T>& in, const BasicConvLayer<T>& l) {
  const long C = static_cast<long>(in.dim(0)), D = static_cast<long>(in.dim(1)), H = static_cast<long>(in.dim(2)),
             W = static_cast<long>(in.dim(3));
  const long O = static_cast<long>(l.kernel.dim(0)), K = static_cast<long>(l.kernel.dim(2));
  const long s = l.stride, p = l.padding;
  const long Do = (D + 2 * p - K) / s + 1, Ho = (H + 2 * p - K) / s + 1, Wo = (W + 2 * p - K) / s + 1;
  BasicTensor<double> out({static_cast<std::size_t>(O), static_cast<std::size_t>(Do), static_cast<std::size_t>(Ho),
                           static_cast<std::size_t>(Wo)});
  for (long o = 0; o < O; ++o)
    for (long z = 0; z < Do; ++z)
      for (long y = 0; y < Ho; ++y)
        for (long x = 0; x < Wo; ++x) {
          double acc = l.bias[o];
          for (long c = 0; c < C; ++c)
            for (long a = 0; a < K; ++a)
              for (long b = 0; b < K; ++b)
                for (long e = 0; e < K; ++e) {
                  const long iz = s * z + a - p, iy = s * y + b - p, ix = s * x + e - p;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                  acc += static_cast<double>(l.kernel[(((o * C + c) * K + a) * K + b) * K + e]) *
                         static_cast<double>(in.at(c, iz, iy, ix));
                }
          out.at(o, z, y, x) = acc;
        }
  return out;
}

// out[o, s*p + d] = bias[o] + sum_i kernel[i, o, d] * in[i, p]
template <typename T>
BasicTensor<double> naive_deconv3d(const BasicTensor<T>& in, const BasicDeconvLayer<T>& l) {
  const std::size_t C = in.dim(0), D = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::size_t O = l.kernel.dim(1), s = static_cast<std::size_t>(l.stride);
  BasicTensor<double> out({O, s * D, s * H, s * W});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t z = 0; z < s * D; ++z)
      for (std::size_t y = 0; y < s * H; ++y)
        for (std::size_t x = 0; x < s * W; ++x) {
          double acc = l.bias[o];
          for (std::size_t c = 0; c < C; ++c)
            acc += static_cast<double>(l.kernel[(((c * O + o) * s + z % s) * s + y % s) * s + x % s]) *
                   static_cast<double>(in.at(c, z / s, y / s, x / s));
          out.at(o, z, y, x) = acc;
        }
  return out;
}

template <typename A, typename B>
double max_rel_diff(const BasicTensor<A>& a, const BasicTensor<B>& b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

template <typename A, typename B>
double inner(const BasicTensor<A>& a, const BasicTensor<B>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

// Fraction of uniform samples over the joint bounding box that fall in both
// footprints, divided by the fraction in either.
inline double monte_carlo_iou(const Polygon& a, const Polygon& b, std::size_t samples, std::uint64_t seed) {
  auto inside = [](const Polygon& p, double x, double y) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& u = p[i];
      const auto& v = p[(i + 1) % p.size()];
      if ((v[0] - u[0]) * (y - u[1]) - (v[1] - u[1]) * (x - u[0]) < 0) return false;
    }
    return true;
  };
  double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
  for (const auto* p : {&a, &b})
    for (const auto& v : *p) {
      lo_x = std::min(lo_x, v[0]);
      hi_x = std::max(hi_x, v[0]);
      lo_y = std::min(lo_y, v[1]);
      hi_y = std::max(hi_y, v[1]);
    }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(lo_x, hi_x), uy(lo_y, hi_y);
  std::size_t both = 0, either = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = ux(rng), y = uy(rng);
    const bool ia = inside(a, x, y), ib = inside(b, x, y);
    both += ia && ib;
    either += ia || ib;
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

}  // namespace voxfcn::testing
