// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The detection network: three stride-2 convolutions (ReLU after each)
// feeding two stride-8 tile deconvolution heads, an objectness head o^a
// (2 channels) and a corner-offset head o^b (24 channels), both at input
// resolution. Also the losses, SGD training and checkpoints.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"
#include "voxfcn/tensor_nn.hpp"
#include "voxfcn/voxel.hpp"

namespace voxfcn {

struct ArchConfig {
  std::size_t in_channels = 1;
  std::array<std::size_t, 3> channels{16, 32, 64};
  std::array<std::size_t, 3> kernels{5, 5, 3};
  std::size_t objectness_channels = 2;
  std::size_t box_channels = kOffsetDims;

  static constexpr int kConvStride = 2;
  static constexpr int kDeconvStride = 8;

  void validate() const {
    if (in_channels == 0) throw ConfigError("arch: in_channels must be positive");
    for (int l = 0; l < 3; ++l) {
      if (channels[l] == 0) throw ConfigError("arch: channel widths must be positive");
      if (kernels[l] == 0 || kernels[l] % 2 == 0) throw ConfigError("arch: conv kernel sizes must be odd");
    }
    if (objectness_channels != 2) throw ConfigError("arch: objectness head must have 2 channels");
    if (box_channels != kOffsetDims) throw ConfigError("arch: box head must have 24 channels");
  }

  // Comma-separated extents, the checkpoint header line.
  std::string header() const {
    std::ostringstream os;
    os << in_channels;
    for (int l = 0; l < 3; ++l) os << ',' << channels[l] << ',' << kernels[l];
    os << ',' << kDeconvStride << ',' << objectness_channels << ',' << box_channels;
    return os.str();
  }

  static ArchConfig parse_header(const std::string& line) {
    std::vector<std::size_t> v;
    std::istringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        v.push_back(static_cast<std::size_t>(std::stoul(tok)));
      } catch (const std::exception&) {
        throw CheckpointError("checkpoint: bad architecture header '" + line + "'");
      }
    }
    if (v.size() != 10 || v[7] != static_cast<std::size_t>(kDeconvStride)) {
      throw CheckpointError("checkpoint: bad architecture header '" + line + "'");
    }
    ArchConfig a;
    a.in_channels = v[0];
    a.channels = {v[1], v[3], v[5]};
    a.kernels = {v[2], v[4], v[6]};
    a.objectness_channels = v[8];
    a.box_channels = v[9];
    try {
      a.validate();
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
    return a;
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

template <typename T>
struct BasicNetworkParams {
  ArchConfig arch;
  BasicConvLayer<T> conv1, conv2, conv3;
  BasicDeconvLayer<T> deconv4a, deconv4b;

  // Zero-initialized parameters of the given architecture.
  static BasicNetworkParams zeros(const ArchConfig& a) {
    a.validate();
    BasicNetworkParams p;
    p.arch = a;
    const std::size_t c0 = a.in_channels;
    const auto [c1, c2, c3] = a.channels;
    const auto [k1, k2, k3] = a.kernels;
    const int s = ArchConfig::kConvStride;
    p.conv1 = BasicConvLayer<T>::make(c0, c1, k1, s, static_cast<int>((k1 - 1) / 2));
    p.conv2 = BasicConvLayer<T>::make(c1, c2, k2, s, static_cast<int>((k2 - 1) / 2));
    p.conv3 = BasicConvLayer<T>::make(c2, c3, k3, s, static_cast<int>((k3 - 1) / 2));
    p.deconv4a = BasicDeconvLayer<T>::make(c3, a.objectness_channels, ArchConfig::kDeconvStride);
    p.deconv4b = BasicDeconvLayer<T>::make(c3, a.box_channels, ArchConfig::kDeconvStride);
    return p;
  }

  // Fixed layer order shared by the optimizer and the checkpoint format.
  std::vector<BasicTensor<T>*> tensors() {
    return {&conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias, &conv3.kernel,
            &conv3.bias,   &deconv4a.kernel, &deconv4a.bias, &deconv4b.kernel, &deconv4b.bias};
  }
  std::vector<const BasicTensor<T>*> tensors() const {
    return {&conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias, &conv3.kernel,
            &conv3.bias,   &deconv4a.kernel, &deconv4a.bias, &deconv4b.kernel, &deconv4b.bias};
  }
  static const std::vector<std::string>& tensor_names() {
    static const std::vector<std::string> names{"conv1.kernel",    "conv1.bias",    "conv2.kernel",   "conv2.bias",
                                                "conv3.kernel",    "conv3.bias",    "deconv4a.kernel", "deconv4a.bias",
                                                "deconv4b.kernel", "deconv4b.bias"};
    return names;
  }

  template <typename U>
  BasicNetworkParams<U> cast() const {
    auto out = BasicNetworkParams<U>::zeros(arch);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = BasicTensor<U>::cast(*src[i]);
    return out;
  }

  friend bool operator==(const BasicNetworkParams&, const BasicNetworkParams&) = default;
};
using NetworkParams = BasicNetworkParams<float>;

// Glorot-uniform kernels in +-sqrt(6 / (fan_in + fan_out)), zero biases.
// fan_in = in_ch * k^3 and fan_out = out_ch * k^3 for both layer kinds.
inline NetworkParams init_params(std::uint64_t seed, const ArchConfig& arch = {}) {
  auto p = NetworkParams::zeros(arch);
  std::mt19937_64 rng(seed);
  auto fill = [&](Tensor& kernel, std::size_t in_ch, std::size_t out_ch) {
    const double k3 = static_cast<double>(kernel.dim(2) * kernel.dim(3) * kernel.dim(4));
    const double bound = std::sqrt(6.0 / ((static_cast<double>(in_ch) + static_cast<double>(out_ch)) * k3));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : kernel.data()) v = static_cast<float>(u(rng));
  };
  fill(p.conv1.kernel, p.conv1.in_channels(), p.conv1.out_channels());
  fill(p.conv2.kernel, p.conv2.in_channels(), p.conv2.out_channels());
  fill(p.conv3.kernel, p.conv3.in_channels(), p.conv3.out_channels());
  fill(p.deconv4a.kernel, p.deconv4a.in_channels(), p.deconv4a.out_channels());
  fill(p.deconv4b.kernel, p.deconv4b.in_channels(), p.deconv4b.out_channels());
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward.

template <typename T>
struct BasicOutputMaps {
  BasicTensor<T> objectness;  // 2 x L x W x H, channel = label
  BasicTensor<T> boxmap;      // 24 x L x W x H
};
using OutputMaps = BasicOutputMaps<float>;

template <typename T>
struct BasicForwardCache {
  BasicTensor<T> input;
  BasicTensor<T> pre1, act1, pre2, act2, pre3, act3;
};

template <typename T>
struct BasicForwardResult {
  BasicOutputMaps<T> maps;
  BasicForwardCache<T> cache;
};

// Coarse (stride-8) cells at which each head is evaluated; null = all.
struct HeadCells {
  const std::vector<std::size_t>* objectness = nullptr;
  const std::vector<std::size_t>* box = nullptr;
};

template <typename T>
BasicForwardResult<T> forward(const BasicTensor<T>& input, const BasicNetworkParams<T>& params,
                              const HeadCells& heads = {}) {
  detail::require_rank(input.shape(), 4, "forward input");
  for (int a = 1; a <= 3; ++a) {
    if (input.dim(a) == 0 || input.dim(a) % 8 != 0) {
      throw DimensionError("forward: grid axis " + std::to_string(a - 1) + " extent " + std::to_string(input.dim(a)) +
                           " is not a positive multiple of 8");
    }
  }
  BasicForwardResult<T> r;
  r.cache.input = input;
  r.cache.pre1 = conv3d_forward(input, params.conv1);
  r.cache.act1 = relu_forward(r.cache.pre1);
  r.cache.pre2 = conv3d_forward(r.cache.act1, params.conv2);
  r.cache.act2 = relu_forward(r.cache.pre2);
  r.cache.pre3 = conv3d_forward(r.cache.act2, params.conv3);
  r.cache.act3 = relu_forward(r.cache.pre3);
  r.maps.objectness = deconv3d_forward(r.cache.act3, params.deconv4a, heads.objectness);
  r.maps.boxmap = deconv3d_forward(r.cache.act3, params.deconv4b, heads.box);
  return r;
}


inline BasicForwardResult<float> forward(const VoxelGrid& grid, const NetworkParams& params,
                                         const HeadCells& heads = {}) {
  return forward(grid.data, params, heads);
}

// Parameter gradients, laid out like the parameters themselves.
template <typename T>
BasicNetworkParams<T> backward(const BasicForwardCache<T>& cache, const BasicNetworkParams<T>& params,
                               const BasicTensor<T>& grad_objectness, const BasicTensor<T>& grad_box) {
  const auto& a3 = cache.act3;
  if (a3.rank() != 4 || a3.dim(0) != params.conv3.out_channels() || cache.pre3.shape() != a3.shape() ||
      cache.pre1.shape() != cache.act1.shape() || cache.pre2.shape() != cache.act2.shape()) {
    throw DimensionError("backward: forward cache does not match the network");
  }
  const std::vector<std::size_t> spatial{a3.dim(1) * 8, a3.dim(2) * 8, a3.dim(3) * 8};
  const std::vector<std::size_t> want_a{params.deconv4a.out_channels(), spatial[0], spatial[1], spatial[2]};
  const std::vector<std::size_t> want_b{params.deconv4b.out_channels(), spatial[0], spatial[1], spatial[2]};
  if (grad_objectness.shape() != want_a || grad_box.shape() != want_b) {
    throw DimensionError("backward: head gradient shapes " + shape_string(grad_objectness.shape()) + ", " +
                         shape_string(grad_box.shape()) + " do not match the cached forward pass");
  }

  auto out = BasicNetworkParams<T>::zeros(params.arch);
  auto ga = deconv3d_backward(a3, params.deconv4a, grad_objectness);
  auto gb = deconv3d_backward(a3, params.deconv4b, grad_box);
  out.deconv4a.kernel = std::move(ga.grad_kernel);
  out.deconv4a.bias = std::move(ga.grad_bias);
  out.deconv4b.kernel = std::move(gb.grad_kernel);
  out.deconv4b.bias = std::move(gb.grad_bias);

  BasicTensor<T> g3 = std::move(ga.grad_input);
  for (std::size_t i = 0; i < g3.size(); ++i) g3[i] += gb.grad_input[i];
  g3 = relu_backward(cache.pre3, g3);
  auto c3 = conv3d_backward(cache.act2, params.conv3, g3);
  out.conv3.kernel = std::move(c3.grad_kernel);
  out.conv3.bias = std::move(c3.grad_bias);

  auto g2 = relu_backward(cache.pre2, c3.grad_input);
  auto c2 = conv3d_backward(cache.act1, params.conv2, g2);
  out.conv2.kernel = std::move(c2.grad_kernel);
  out.conv2.bias = std::move(c2.grad_bias);

  auto g1 = relu_backward(cache.pre1, c2.grad_input);
  auto c1 = conv3d_backward(cache.input, params.conv1, g1, /*want_grad_input=*/false);
  out.conv1.kernel = std::move(c1.grad_kernel);
  out.conv1.bias = std::move(c1.grad_bias);
  return out;
}

// ---------------------------------------------------------------------------
// Losses. Objectness uses the softmax over *negated* logits:
//   p = exp(-o[label]) / sum_l exp(-o[l]),  loss = -log p,
// evaluated with a log-sum-exp. Channel 1 is the foreground label.

template <typename T>
struct BasicLoss {
  double value = 0.0;
  BasicTensor<T> grad;
};

inline double negated_softmax_nll(double o0, double o1, int label, double& g0, double& g1) {
  const double z0 = -o0, z1 = -o1;
  const double m = std::max(z0, z1);
  const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  const double s0 = std::exp(z0 - lse), s1 = std::exp(z1 - lse);
  g0 = (label == 0 ? 1.0 : 0.0) - s0;
  g1 = (label == 1 ? 1.0 : 0.0) - s1;
  return lse - (label == 0 ? z0 : z1);
}

// Foreground probability of one cell.
inline double foreground_probability(double o0, double o1) {
  const double z = o1 - o0;  // p1 = 1 / (1 + exp(o1 - o0))
  return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
}

// Sum over `cells` (flat indices, default: every non-ignore cell).
template <typename T>
BasicLoss<T> objectness_loss(const BasicTensor<T>& o_a, const TargetVolume& targets,
                             const std::vector<std::size_t>* cells = nullptr) {
  const std::size_t n = targets.labels.size();
  if (o_a.size() != 2 * n || o_a.dim(0) != 2) throw DimensionError("objectness_loss: map does not match targets");
  BasicLoss<T> r;
  r.grad = BasicTensor<T>(o_a.shape());
  auto visit = [&](std::size_t f) {
    const CellLabel lab = targets.labels[f];
    if (lab == CellLabel::ignore) return;
    double g0 = 0, g1 = 0;
    r.value += negated_softmax_nll(o_a[f], o_a[n + f], lab == CellLabel::positive ? 1 : 0, g0, g1);
    r.grad[f] += static_cast<T>(g0);
    r.grad[n + f] += static_cast<T>(g1);
  };
  if (cells) {
    for (std::size_t f : *cells) visit(f);
  } else {
    for (std::size_t f = 0; f < n; ++f) visit(f);
  }
  return r;
}

template <typename T>
BasicLoss<T> box_loss(const BasicTensor<T>& o_b, const TargetVolume& targets) {
  const std::size_t n = targets.labels.size();
  if (o_b.size() != kOffsetDims * n || o_b.dim(0) != kOffsetDims) {
    throw DimensionError("box_loss: map does not match targets");
  }
  BasicLoss<T> r;
  r.grad = BasicTensor<T>(o_b.shape());
  for (std::size_t p = 0; p < targets.positive_cells.size(); ++p) {
    const std::size_t f = targets.positive_cells[p];
    for (std::size_t c = 0; c < kOffsetDims; ++c) {
      const double d = static_cast<double>(o_b[c * n + f]) - static_cast<double>(targets.offsets[p][c]);
      r.value += d * d;
      r.grad[c * n + f] = static_cast<T>(2.0 * d);
    }
  }
  return r;
}

template <typename T>
struct BasicTotalLoss {
  double total = 0, objectness = 0, box = 0;
  BasicTensor<T> grad_objectness, grad_box;
};

template <typename T>
BasicTotalLoss<T> total_loss(const BasicOutputMaps<T>& maps, const TargetVolume& targets, double w,
                             const std::vector<std::size_t>* objectness_cells = nullptr) {
  auto lo = objectness_loss(maps.objectness, targets, objectness_cells);
  auto lb = box_loss(maps.boxmap, targets);
  BasicTotalLoss<T> r;
  r.objectness = lo.value;
  r.box = lb.value;
  r.total = lo.value + w * lb.value;
  r.grad_objectness = std::move(lo.grad);
  r.grad_box = std::move(lb.grad);
  for (auto& g : r.grad_box.data()) g = static_cast<T>(w * g);
  return r;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  double w = 0.02;
  double lr = 1e-3;
  double momentum = 0.9;
  int epochs = 10;
  double neg_pos_ratio = 8.0;
  std::size_t min_negatives = 256;
  std::uint64_t seed = 1;
  double clip_norm = 0.0;   // global gradient-norm clip; 0 disables
  int lr_decay_epoch = 0;   // multiply lr by lr_decay_factor every this many epochs; 0 disables
  double lr_decay_factor = 0.1;
  bool augment_flip = false;  // mirror scenes across the grid's y mid-plane at random
  int augment_shift = 0;      // random whole-cell translation in x and y, up to this many cells

  void validate() const {
    if (!(w >= 0)) throw ConfigError("train.w must be >= 0");
    if (!(lr >= 0)) throw ConfigError("train.lr must be >= 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must be in [0, 1)");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (!(neg_pos_ratio >= 0)) throw ConfigError("train.neg_pos_ratio must be >= 0");
    if (clip_norm < 0) throw ConfigError("train.clip_norm must be >= 0");
    if (lr_decay_epoch < 0 || !(lr_decay_factor > 0)) throw ConfigError("train.lr_decay settings invalid");
    if (augment_shift < 0) throw ConfigError("train.augment_shift must be >= 0");
  }
};

struct TrainingScene {
  VoxelGrid grid;
  TargetVolume targets;
};

struct EpochLoss {
  int epoch = 0;
  double objectness = 0, box = 0, total = 0;  // per-step means
};

struct StepLoss {
  double objectness = 0, box = 0, total = 0;
};

struct TrainResult {
  NetworkParams params;
  std::vector<EpochLoss> history;
  std::vector<StepLoss> steps;
};

// All positives plus max(neg_pos_ratio * |positives|, min_negatives) distinct
// negatives drawn uniformly (capped by the number available). Ascending order.
inline std::vector<std::size_t> sample_loss_cells(const TargetVolume& t, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::size_t negatives = 0;
  for (auto l : t.labels) negatives += l == CellLabel::negative;
  const auto want = std::min<std::size_t>(
      negatives, std::max<std::size_t>(cfg.min_negatives,
                                       static_cast<std::size_t>(cfg.neg_pos_ratio * t.positive_cells.size())));
  std::set<std::size_t> chosen(t.positive_cells.begin(), t.positive_cells.end());
  if (want == negatives) {
    for (std::size_t f = 0; f < t.labels.size(); ++f)
      if (t.labels[f] == CellLabel::negative) chosen.insert(f);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, t.labels.size() - 1);
    std::size_t got = 0;
    while (got < want) {
      const std::size_t f = pick(rng);
      if (t.labels[f] == CellLabel::negative && chosen.insert(f).second) ++got;
    }
  }
  return {chosen.begin(), chosen.end()};
}

// Stride-8 cells covering a set of fine cells.
inline std::vector<std::size_t> coarse_cells(const std::vector<std::size_t>& fine, const GridSpec& spec) {
  const std::size_t cw = spec.dims[1] / 8, ch = spec.dims[2] / 8;
  std::set<std::size_t> out;
  for (std::size_t f : fine) {
    const auto c = spec.unflat(f);
    out.insert(((c[0] / 8) * cw + c[1] / 8) * ch + c[2] / 8);
  }
  return {out.begin(), out.end()};
}

// Mirror across the grid's y mid-plane (cell j -> W-1-j) and/or translate by
// whole cells. Cells shifted in from outside are empty and negative; targets
// leaving the grid are dropped. A mirrored box has negated yaw, so corner k
// of the new box is the mirror image of old corner k^2.
inline TrainingScene augment_scene(const TrainingScene& s, bool flip_y, long dx, long dy) {
  const auto& spec = s.grid.spec;
  const long L = static_cast<long>(spec.dims[0]), W = static_cast<long>(spec.dims[1]);
  TrainingScene out{VoxelGrid{spec, Tensor(s.grid.data.shape())}, TargetVolume{}};
  out.targets.spec = spec;
  out.targets.labels.assign(spec.cell_count(), CellLabel::negative);
  auto move = [&](std::size_t f, std::size_t& to) {
    const auto c = spec.unflat(f);
    const long i = static_cast<long>(c[0]) + dx;
    const long j = (flip_y ? W - 1 - static_cast<long>(c[1]) : static_cast<long>(c[1])) + dy;
    if (i < 0 || i >= L || j < 0 || j >= W) return false;
    to = spec.flat({static_cast<std::size_t>(i), static_cast<std::size_t>(j), c[2]});
    return true;
  };
  std::size_t to = 0;
  for (std::size_t f = 0; f < spec.cell_count(); ++f) {
    if (!move(f, to)) continue;
    out.grid.data[to] = s.grid.data[f];
    out.targets.labels[to] = s.targets.labels[f];
  }
  std::vector<std::pair<std::size_t, std::size_t>> moved;  // (new cell, old positive index)
  for (std::size_t p = 0; p < s.targets.positive_cells.size(); ++p)
    if (move(s.targets.positive_cells[p], to)) moved.emplace_back(to, p);
  std::sort(moved.begin(), moved.end());
  for (const auto& [cell, p] : moved) {
    out.targets.positive_cells.push_back(cell);
    out.targets.positive_object.push_back(s.targets.positive_object[p]);
    OffsetVector v = s.targets.offsets[p];
    if (flip_y) {
      const OffsetVector& o = s.targets.offsets[p];
      for (std::size_t k = 0; k < 8; ++k) {
        v[3 * k] = o[3 * (k ^ 2)];
        v[3 * k + 1] = -o[3 * (k ^ 2) + 1];
        v[3 * k + 2] = o[3 * (k ^ 2) + 2];
      }
    }
    out.targets.offsets.push_back(v);
  }
  return out;
}

using TrainProgress = std::function<void(const EpochLoss&)>;

// One SGD step per scene, scenes reshuffled every epoch. Each step evaluates
// the heads only on the tiles reached by its loss cells.
inline TrainResult train(const std::vector<TrainingScene>& scenes, const TrainConfig& cfg, const ArchConfig& arch = {},
                         const TrainProgress& progress = {}) {
  cfg.validate();
  if (scenes.empty()) throw ConfigError("train: empty dataset");
  TrainResult res;
  res.params = init_params(cfg.seed, arch);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Tensor> velocity;
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double lr = cfg.lr;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.lr_decay_epoch > 0 && epoch > 1 && (epoch - 1) % cfg.lr_decay_epoch == 0) lr *= cfg.lr_decay_factor;
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss el;
    el.epoch = epoch;
    for (std::size_t idx : order) {
      TrainingScene augmented;
      const TrainingScene* picked = &scenes[idx];
      if (cfg.augment_flip || cfg.augment_shift > 0) {
        const bool flip = cfg.augment_flip && std::bernoulli_distribution(0.5)(rng);
        std::uniform_int_distribution<long> shift(-cfg.augment_shift, cfg.augment_shift);
        const long dx = shift(rng), dy = shift(rng);
        augmented = augment_scene(scenes[idx], flip, dx, dy);
        picked = &augmented;
      }
      const auto& scene = *picked;
      const auto cells = sample_loss_cells(scene.targets, cfg, rng);
      const auto obj_tiles = coarse_cells(cells, scene.grid.spec);
      const auto box_tiles = coarse_cells(scene.targets.positive_cells, scene.grid.spec);
      const auto fr = forward(scene.grid.data, res.params, HeadCells{&obj_tiles, &box_tiles});
      const auto loss = total_loss(fr.maps, scene.targets, cfg.w, &cells);
      if (!std::isfinite(loss.total)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + " (objectness " +
                             std::to_string(loss.objectness) + ", box " + std::to_string(loss.box) + ")");
      }
      auto grads = backward(fr.cache, res.params, loss.grad_objectness, loss.grad_box);
      auto gt = grads.tensors();
      if (cfg.clip_norm > 0) {
        double sq = 0;
        for (const auto* g : gt)
          for (float v : g->data()) sq += static_cast<double>(v) * v;
        const double gn = std::sqrt(sq);
        if (gn > cfg.clip_norm) {
          const auto s = static_cast<float>(cfg.clip_norm / gn);
          for (auto* g : gt)
            for (auto& v : g->data()) v *= s;
        }
      }
      auto pt = res.params.tensors();
      std::vector<const Tensor*> gconst(gt.begin(), gt.end());
      sgd_step<float>(pt, gconst, velocity, lr, cfg.momentum);
      res.steps.push_back({loss.objectness, loss.box, loss.total});
      el.objectness += loss.objectness;
      el.box += loss.box;
      el.total += loss.total;
    }
    const double n = static_cast<double>(scenes.size());
    el.objectness /= n;
    el.box /= n;
    el.total /= n;
    res.history.push_back(el);
    if (progress) progress(el);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: "V3DFCN\0", u32 version, architecture header line, then the
// parameter tensors as little-endian float32 in tensors() order.

inline constexpr char kCheckpointMagic[7] = {'V', '3', 'D', 'F', 'C', 'N', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out << params.arch.header() << '\n';
  for (const auto* t : params.tensors()) {
    out.write(reinterpret_cast<const char*>(t->data_ptr()), static_cast<std::streamsize>(t->size() * sizeof(float)));
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

inline NetworkParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  }
  std::uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version)) throw CheckpointError("checkpoint: truncated header");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::string header;
  if (!std::getline(in, header)) throw CheckpointError("checkpoint: truncated header");
  auto params = NetworkParams::zeros(ArchConfig::parse_header(header));
  for (auto* t : params.tensors()) {
    const auto bytes = static_cast<std::streamsize>(t->size() * sizeof(float));
    if (!in.read(reinterpret_cast<char*>(t->data_ptr()), bytes) || in.gcount() != bytes) {
      throw CheckpointError("checkpoint: file truncated inside parameter data: " + path.string());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes after parameters");
  return params;
}

}  // namespace voxfcn
