// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Finite-difference verification of every hand-derived gradient: each layer
// on its own, then the full network under the detection loss. Runs in double
// precision through the same templated kernels the float network uses.

#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "voxfcn/fcn3d.hpp"
#include "voxfcn/synth.hpp"
#include "voxfcn/tensor_nn.hpp"
#include "voxfcn/voxel.hpp"

namespace voxfcn {

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-3;
  std::size_t coords_per_tensor = 64;
  // Test hook: scales every analytic gradient by (1 + corrupt) before comparison.
  double corrupt = 0.0;
};

namespace detail {

template <typename T>
void fill_uniform(BasicTensor<T>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
}

inline BasicTensor<double> scaled(BasicTensor<double> t, double corrupt) {
  if (corrupt != 0.0)
    for (auto& v : t.data()) v *= 1.0 + corrupt;
  return t;
}

inline double inner(const BasicTensor<double>& a, const BasicTensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// Each layer is checked through the scalar <R, layer(x)> for a random R.
inline std::vector<NamedCheck> check_layer_gradients(const GradCheckOptions& opt = {}) {
  using T = double;
  std::mt19937_64 rng(opt.seed);
  std::vector<NamedCheck> out;

  {
    auto layer = BasicConvLayer<T>::make(2, 3, 3, 2, 1);
    detail::fill_uniform(layer.kernel, rng);
    detail::fill_uniform(layer.bias, rng);
    BasicTensor<T> x({2, 6, 6, 6});
    detail::fill_uniform(x, rng);
    const auto y = conv3d_forward(x, layer);
    BasicTensor<T> r(y.shape());
    detail::fill_uniform(r, rng);
    const auto g = conv3d_backward(x, layer, r);
    out.push_back({"conv3d.input", grad_check<T>([&](const BasicTensor<T>& v) { return detail::inner(r, conv3d_forward(v, layer)); },
                                                 detail::scaled(g.grad_input, opt.corrupt), x, opt.step,
                                                 opt.coords_per_tensor, opt.seed)});
    out.push_back({"conv3d.kernel", grad_check<T>(
                                        [&](const BasicTensor<T>& k) {
                                          auto l = layer;
                                          l.kernel = k;
                                          return detail::inner(r, conv3d_forward(x, l));
                                        },
                                        detail::scaled(g.grad_kernel, opt.corrupt), layer.kernel, opt.step,
                                        opt.coords_per_tensor, opt.seed + 1)});
    out.push_back({"conv3d.bias", grad_check<T>(
                                      [&](const BasicTensor<T>& b) {
                                        auto l = layer;
                                        l.bias = b;
                                        return detail::inner(r, conv3d_forward(x, l));
                                      },
                                      detail::scaled(g.grad_bias, opt.corrupt), layer.bias, opt.step,
                                      opt.coords_per_tensor, opt.seed + 2)});
  }
  {
    auto layer = BasicDeconvLayer<T>::make(3, 2, 2);
    detail::fill_uniform(layer.kernel, rng);
    detail::fill_uniform(layer.bias, rng);
    BasicTensor<T> x({3, 3, 2, 3});
    detail::fill_uniform(x, rng);
    const auto y = deconv3d_forward(x, layer);
    BasicTensor<T> r(y.shape());
    detail::fill_uniform(r, rng);
    const auto g = deconv3d_backward(x, layer, r);
    out.push_back({"deconv3d.input", grad_check<T>([&](const BasicTensor<T>& v) { return detail::inner(r, deconv3d_forward(v, layer)); },
                                                   detail::scaled(g.grad_input, opt.corrupt), x, opt.step,
                                                   opt.coords_per_tensor, opt.seed + 3)});
    out.push_back({"deconv3d.kernel", grad_check<T>(
                                          [&](const BasicTensor<T>& k) {
                                            auto l = layer;
                                            l.kernel = k;
                                            return detail::inner(r, deconv3d_forward(x, l));
                                          },
                                          detail::scaled(g.grad_kernel, opt.corrupt), layer.kernel, opt.step,
                                          opt.coords_per_tensor, opt.seed + 4)});
    out.push_back({"deconv3d.bias", grad_check<T>(
                                        [&](const BasicTensor<T>& b) {
                                          auto l = layer;
                                          l.bias = b;
                                          return detail::inner(r, deconv3d_forward(x, l));
                                        },
                                        detail::scaled(g.grad_bias, opt.corrupt), layer.bias, opt.step,
                                        opt.coords_per_tensor, opt.seed + 5)});
  }
  {
    BasicTensor<T> x({1, 4, 4, 4});
    detail::fill_uniform(x, rng);
    // Keep every entry at least 1e-2 away from the kink.
    for (auto& v : x.data())
      if (std::abs(v) < 1e-2) v = v < 0 ? -1e-2 - std::abs(v) : 1e-2 + v;
    BasicTensor<T> r(x.shape());
    detail::fill_uniform(r, rng);
    const auto g = relu_backward(x, r);
    out.push_back({"relu.input", grad_check<T>([&](const BasicTensor<T>& v) { return detail::inner(r, relu_forward(v)); },
                                               detail::scaled(g, opt.corrupt), x, opt.step, opt.coords_per_tensor,
                                               opt.seed + 6)});
  }
  return out;
}

// A 16^3 scene with one car near the middle and random occupancy around it.
struct GradCheckScene {
  BasicTensor<double> input;
  TargetVolume targets;
};

inline GradCheckScene make_gradcheck_scene(std::uint64_t seed, double sphere_radius_fraction = 0.25) {
  const GridSpec spec{{0.0, -3.2, -3.2}, 0.4, {16, 16, 16}};
  const auto calib = synthetic_calibration();
  OrientedBox3D car;
  car.center = {3.3, 0.1, -0.4};
  car.size = {4.0, 1.8, 1.5};
  car.yaw = 0.3;
  std::vector<ObjectLabel> labels{box_to_label(car, calib, "Car")};
  GradCheckScene s;
  s.targets = generate_targets(labels, calib, spec, sphere_radius_fraction);
  s.input = BasicTensor<double>({1, 16, 16, 16});
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution occupied(0.2);
  for (auto& v : s.input.data()) v = occupied(rng) ? 1.0 : 0.0;
  return s;
}

// The network with its ReLU masks held fixed: the linear piece containing the
// base point. Finite differences on it sidestep the kinks, which are dense
// enough that any +-step nudge of an early bias flips some unit.
template <typename T>
BasicOutputMaps<T> forward_frozen(const BasicTensor<T>& input, const BasicNetworkParams<T>& params,
                                  const BasicForwardCache<T>& base) {
  auto masked = [](BasicTensor<T> pre, const BasicTensor<T>& base_pre) {
    for (std::size_t i = 0; i < pre.size(); ++i)
      if (!(base_pre[i] > 0)) pre[i] = 0;
    return pre;
  };
  const auto a1 = masked(conv3d_forward(input, params.conv1), base.pre1);
  const auto a2 = masked(conv3d_forward(a1, params.conv2), base.pre2);
  const auto a3 = masked(conv3d_forward(a2, params.conv3), base.pre3);
  return {deconv3d_forward(a3, params.deconv4a), deconv3d_forward(a3, params.deconv4b)};
}

// Half the coordinates where the analytic gradient is nonzero, the rest
// uniformly; sparse heads would otherwise be checked mostly at exact zeros.
inline std::vector<std::size_t> pick_coords(const BasicTensor<double>& analytic, std::size_t count, std::uint64_t seed) {
  if (analytic.size() <= count) {
    std::vector<std::size_t> all(analytic.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    if (analytic[i] != 0) nonzero.push_back(i);
  std::shuffle(nonzero.begin(), nonzero.end(), rng);
  std::set<std::size_t> chosen(nonzero.begin(), nonzero.begin() + std::min(nonzero.size(), count / 2));
  std::uniform_int_distribution<std::size_t> any(0, analytic.size() - 1);
  while (chosen.size() < count) chosen.insert(any(rng));
  return {chosen.begin(), chosen.end()};
}

// Full-network check of the total loss w.r.t. every parameter tensor.
inline std::vector<NamedCheck> check_network_gradients(const NetworkParams& params_f, double w,
                                                       const GradCheckOptions& opt = {}) {
  using T = double;
  const auto scene = make_gradcheck_scene(opt.seed);
  auto params = params_f.cast<T>();
  // Random biases keep pre-activations away from exact zeros on empty regions.
  std::mt19937_64 rng(opt.seed + 17);
  for (auto* b : {&params.conv1.bias, &params.conv2.bias, &params.conv3.bias, &params.deconv4a.bias, &params.deconv4b.bias})
    detail::fill_uniform(*b, rng, -0.1, 0.1);

  // The loss as training sees it: positives plus sampled negatives.
  std::mt19937_64 sample_rng(opt.seed + 29);
  const auto cells = sample_loss_cells(scene.targets, TrainConfig{}, sample_rng);
  const auto base = forward(scene.input, params);
  const auto loss = total_loss(base.maps, scene.targets, w, &cells);
  const auto grads = backward(base.cache, params, loss.grad_objectness, loss.grad_box);

  std::vector<NamedCheck> out;
  {
    // The frozen network must coincide with the real one at the base point.
    const auto frozen = total_loss(forward_frozen(scene.input, params, base.cache), scene.targets, w, &cells).total;
    GradCheckResult r;
    r.max_rel_error = relative_error(loss.total, frozen);
    r.checked = 1;
    r.within_1e3 = r.max_rel_error < 1e-3;
    out.push_back({"frozen_forward", r});
  }
  const auto names = BasicNetworkParams<T>::tensor_names();
  const auto gts = grads.tensors();
  for (std::size_t ti = 0; ti < names.size(); ++ti) {
    auto f = [&](const BasicTensor<T>& x) {
      auto p = params;
      *p.tensors()[ti] = x;
      return total_loss(forward_frozen(scene.input, p, base.cache), scene.targets, w, &cells).total;
    };
    const auto analytic = detail::scaled(*gts[ti], opt.corrupt);
    const auto coords = pick_coords(*gts[ti], opt.coords_per_tensor, opt.seed + 100 + ti);
    out.push_back({names[ti], grad_check_at<T>(f, analytic, *params.tensors()[ti], opt.step, coords)});
  }
  return out;
}

}  // namespace voxfcn
