// Copyright 2026 The voxfcn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dense tensors, 3D convolution / tile deconvolution, ReLU and SGD.
//
// Everything is templated on the storage scalar. The network runs on
// `Tensor` (float); the gradient checker instantiates the same kernels with
// double so finite differences are not swamped by float rounding.
// Convolution inner loops always accumulate in double.

#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "voxfcn/common.hpp"

namespace voxfcn {

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  BasicTensor(std::vector<std::size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw DimensionError("tensor data length does not match shape");
  }

  template <typename U>
  static BasicTensor cast(const BasicTensor<U>& other) {
    std::vector<T> d(other.data().begin(), other.data().end());
    return BasicTensor(other.shape(), std::move(d));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data_ptr() { return data_.data(); }
  const T* data_ptr() const { return data_.data(); }
  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4D (channel, d, h, w) access; the hot loops index raw pointers instead.
  T& at(std::size_t c, std::size_t d, std::size_t h, std::size_t w) { return data_[offset4(c, d, h, w)]; }
  const T& at(std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return data_[offset4(c, d, h, w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::size_t offset4(std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return ((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  return os.str();
}

namespace detail {

// Double-precision dot product with eight independent partial sums so the
// compiler can vectorize it without reassociation flags.
template <typename A, typename B>
double dot_f64(const A* a, const B* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += static_cast<double>(a[i + l]) * static_cast<double>(b[i + l]);
  }
  double tail = 0;
  for (; i < n; ++i) tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename A>
void axpy_f64(double* acc, double w, const A* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] += w * static_cast<double>(x[i]);
}

inline void require_rank(const std::vector<std::size_t>& s, std::size_t r, const char* what) {
  if (s.size() != r) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got shape " +
                         shape_string(s));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip).

template <typename T>
struct BasicConvLayer {
  BasicTensor<T> kernel;  // out_ch x in_ch x k x k x k
  BasicTensor<T> bias;    // out_ch
  int stride = 1;
  int padding = 0;

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t ksize() const { return kernel.dim(2); }

  friend bool operator==(const BasicConvLayer&, const BasicConvLayer&) = default;

  static BasicConvLayer make(std::size_t in_ch, std::size_t out_ch, std::size_t k, int stride, int padding) {
    if (in_ch == 0 || out_ch == 0 || k == 0) throw DimensionError("conv kernel extents must be positive");
    return {BasicTensor<T>({out_ch, in_ch, k, k, k}), BasicTensor<T>({out_ch}), stride, padding};
  }
};
using ConvLayer = BasicConvLayer<float>;

// Output spatial extents of a conv, floor((n + 2*pad - k) / stride) + 1 per
// axis; throws naming the first axis where the padded input is smaller than
// the kernel.
template <typename T>
std::array<std::size_t, 3> conv3d_output_dims(const std::vector<std::size_t>& in_shape,
                                              const BasicConvLayer<T>& layer) {
  detail::require_rank(in_shape, 4, "conv3d input");
  detail::require_rank(layer.kernel.shape(), 5, "conv3d kernel");
  if (in_shape[0] != layer.in_channels()) {
    throw DimensionError("conv3d: axis 0 (channels) is " + std::to_string(in_shape[0]) + ", kernel expects " +
                         std::to_string(layer.in_channels()));
  }
  if (layer.stride <= 0 || layer.padding < 0) throw DimensionError("conv3d: stride must be > 0 and padding >= 0");
  const std::size_t k = layer.ksize();
  std::array<std::size_t, 3> out{};
  static const char* names[] = {"depth", "height", "width"};
  for (int a = 0; a < 3; ++a) {
    const long span = static_cast<long>(in_shape[a + 1]) + 2L * layer.padding - static_cast<long>(k);
    if (span < 0) {
      throw DimensionError(std::string("conv3d: axis ") + std::to_string(a + 1) + " (" + names[a] + ") extent " +
                           std::to_string(in_shape[a + 1]) + " incompatible with k=" + std::to_string(k) +
                           " stride=" + std::to_string(layer.stride) + " pad=" + std::to_string(layer.padding));
    }
    out[a] = static_cast<std::size_t>(span / layer.stride + 1);
  }
  return out;
}

namespace detail {

// Column matrix: rows (in_ch, kd, kh, kw), columns = output positions.
template <typename T>
std::vector<T> im2col(const BasicTensor<T>& input, std::size_t k, int stride, int pad,
                      const std::array<std::size_t, 3>& od) {
  const std::size_t C = input.dim(0), D = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t P = od[0] * od[1] * od[2];
  const std::size_t R = C * k * k * k;
  std::vector<T> col(R * P, T(0));
  const T* in = input.data_ptr();
  parallel_for(C, [&](std::size_t c) {
    for (std::size_t kd = 0; kd < k; ++kd)
      for (std::size_t kh = 0; kh < k; ++kh)
        for (std::size_t kw = 0; kw < k; ++kw) {
          T* row = col.data() + (((c * k + kd) * k + kh) * k + kw) * P;
          for (std::size_t pd = 0; pd < od[0]; ++pd) {
            const long z = static_cast<long>(pd) * stride + static_cast<long>(kd) - pad;
            if (z < 0 || z >= static_cast<long>(D)) continue;
            for (std::size_t ph = 0; ph < od[1]; ++ph) {
              const long y = static_cast<long>(ph) * stride + static_cast<long>(kh) - pad;
              if (y < 0 || y >= static_cast<long>(H)) continue;
              const T* src = in + ((c * D + static_cast<std::size_t>(z)) * H + static_cast<std::size_t>(y)) * W;
              T* dst = row + (pd * od[1] + ph) * od[2];
              for (std::size_t pw = 0; pw < od[2]; ++pw) {
                const long x = static_cast<long>(pw) * stride + static_cast<long>(kw) - pad;
                if (x >= 0 && x < static_cast<long>(W)) dst[pw] = src[x];
              }
            }
          }
        }
  });
  return col;
}

// Adjoint of im2col: scatter-add column gradients back into an input-shaped
// tensor. Each input channel is owned by one worker.
template <typename T>
void col2im(const std::vector<double>& gcol, BasicTensor<T>& grad_in, std::size_t k, int stride, int pad,
            const std::array<std::size_t, 3>& od) {
  const std::size_t C = grad_in.dim(0), D = grad_in.dim(1), H = grad_in.dim(2), W = grad_in.dim(3);
  const std::size_t P = od[0] * od[1] * od[2];
  T* out = grad_in.data_ptr();
  parallel_for(C, [&](std::size_t c) {
    std::vector<double> acc(D * H * W, 0.0);
    for (std::size_t kd = 0; kd < k; ++kd)
      for (std::size_t kh = 0; kh < k; ++kh)
        for (std::size_t kw = 0; kw < k; ++kw) {
          const double* row = gcol.data() + (((c * k + kd) * k + kh) * k + kw) * P;
          for (std::size_t pd = 0; pd < od[0]; ++pd) {
            const long z = static_cast<long>(pd) * stride + static_cast<long>(kd) - pad;
            if (z < 0 || z >= static_cast<long>(D)) continue;
            for (std::size_t ph = 0; ph < od[1]; ++ph) {
              const long y = static_cast<long>(ph) * stride + static_cast<long>(kh) - pad;
              if (y < 0 || y >= static_cast<long>(H)) continue;
              double* dst = acc.data() + (static_cast<std::size_t>(z) * H + static_cast<std::size_t>(y)) * W;
              const double* src = row + (pd * od[1] + ph) * od[2];
              for (std::size_t pw = 0; pw < od[2]; ++pw) {
                const long x = static_cast<long>(pw) * stride + static_cast<long>(kw) - pad;
                if (x >= 0 && x < static_cast<long>(W)) dst[x] += src[pw];
              }
            }
          }
        }
    for (std::size_t i = 0; i < acc.size(); ++i) out[c * D * H * W + i] = static_cast<T>(acc[i]);
  });
}

}  // namespace detail

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicConvLayer<T>& layer) {
  const auto od = conv3d_output_dims(input.shape(), layer);
  const std::size_t O = layer.out_channels();
  const std::size_t k = layer.ksize();
  const std::size_t P = od[0] * od[1] * od[2];
  const std::size_t R = layer.in_channels() * k * k * k;
  const auto col = detail::im2col(input, k, layer.stride, layer.padding, od);

  BasicTensor<T> out({O, od[0], od[1], od[2]});
  const T* kern = layer.kernel.data_ptr();
  parallel_for(O, [&](std::size_t o) {
    std::vector<double> acc(P, static_cast<double>(layer.bias[o]));
    const T* wrow = kern + o * R;
    for (std::size_t r = 0; r < R; ++r) {
      const double w = wrow[r];
      if (w != 0.0) detail::axpy_f64(acc.data(), w, col.data() + r * P, P);
    }
    T* dst = out.data_ptr() + o * P;
    for (std::size_t p = 0; p < P; ++p) dst[p] = static_cast<T>(acc[p]);
  });
  return out;
}

template <typename T>
struct BasicLayerGrads {
  BasicTensor<T> grad_input;  // empty when not requested
  BasicTensor<T> grad_kernel;
  BasicTensor<T> grad_bias;
};
using LayerGrads = BasicLayerGrads<float>;

template <typename T>
BasicLayerGrads<T> conv3d_backward(const BasicTensor<T>& input, const BasicConvLayer<T>& layer,
                                   const BasicTensor<T>& grad_out, bool want_grad_input = true) {
  const auto od = conv3d_output_dims(input.shape(), layer);
  const std::size_t O = layer.out_channels();
  const std::size_t k = layer.ksize();
  const std::size_t P = od[0] * od[1] * od[2];
  const std::size_t R = layer.in_channels() * k * k * k;
  const std::vector<std::size_t> expect{O, od[0], od[1], od[2]};
  if (grad_out.shape() != expect) {
    throw DimensionError("conv3d_backward: grad_out shape " + shape_string(grad_out.shape()) + " != forward output " +
                         shape_string(expect));
  }
  const auto col = detail::im2col(input, k, layer.stride, layer.padding, od);
  const T* g = grad_out.data_ptr();

  BasicLayerGrads<T> res;
  res.grad_bias = BasicTensor<T>({O});
  res.grad_kernel = BasicTensor<T>(layer.kernel.shape());
  std::vector<char> live(O, 0);
  for (std::size_t o = 0; o < O; ++o) {
    double s = 0;
    for (std::size_t p = 0; p < P; ++p) s += g[o * P + p];
    res.grad_bias[o] = static_cast<T>(s);
    live[o] = std::any_of(g + o * P, g + (o + 1) * P, [](T v) { return v != T(0); });
  }
  parallel_for(O, [&](std::size_t o) {
    if (!live[o]) return;
    T* dst = res.grad_kernel.data_ptr() + o * R;
    for (std::size_t r = 0; r < R; ++r) dst[r] = static_cast<T>(detail::dot_f64(g + o * P, col.data() + r * P, P));
  });

  if (want_grad_input) {
    std::vector<double> gcol(R * P, 0.0);
    const T* kern = layer.kernel.data_ptr();
    parallel_for(R, [&](std::size_t r) {
      double* acc = gcol.data() + r * P;
      for (std::size_t o = 0; o < O; ++o) {
        const double w = kern[o * R + r];
        if (w != 0.0 && live[o]) detail::axpy_f64(acc, w, g + o * P, P);
      }
    });
    res.grad_input = BasicTensor<T>(input.shape());
    detail::col2im(gcol, res.grad_input, k, layer.stride, layer.padding, od);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Transposed convolution with kernel size equal to stride: every input cell
// expands into its own non-overlapping k^3 output tile.

template <typename T>
struct BasicDeconvLayer {
  BasicTensor<T> kernel;  // in_ch x out_ch x k x k x k
  BasicTensor<T> bias;    // out_ch
  int stride = 1;

  std::size_t in_channels() const { return kernel.dim(0); }
  std::size_t out_channels() const { return kernel.dim(1); }
  std::size_t ksize() const { return kernel.dim(2); }

  friend bool operator==(const BasicDeconvLayer&, const BasicDeconvLayer&) = default;

  static BasicDeconvLayer make(std::size_t in_ch, std::size_t out_ch, int stride) {
    if (in_ch == 0 || out_ch == 0 || stride <= 0) throw DimensionError("deconv extents must be positive");
    const auto k = static_cast<std::size_t>(stride);
    return {BasicTensor<T>({in_ch, out_ch, k, k, k}), BasicTensor<T>({out_ch}), stride};
  }
};
using DeconvLayer = BasicDeconvLayer<float>;

namespace detail {

template <typename T>
void check_deconv(const std::vector<std::size_t>& in_shape, const BasicDeconvLayer<T>& layer) {
  require_rank(layer.kernel.shape(), 5, "deconv3d kernel");
  const std::size_t k = layer.ksize();
  if (layer.stride <= 0 || k != static_cast<std::size_t>(layer.stride) || layer.kernel.dim(3) != k ||
      layer.kernel.dim(4) != k) {
    throw ConfigError("deconv3d: kernel size must equal stride (got k=" + std::to_string(k) +
                      ", stride=" + std::to_string(layer.stride) + ")");
  }
  require_rank(in_shape, 4, "deconv3d input");
  if (in_shape[0] != layer.in_channels()) {
    throw DimensionError("deconv3d: axis 0 (channels) is " + std::to_string(in_shape[0]) + ", kernel expects " +
                         std::to_string(layer.in_channels()));
  }
}

}  // namespace detail

// `active` optionally restricts evaluation to a subset of input cells (flat
// spatial index); tiles of inactive cells hold only the bias. Training uses
// this to skip tiles that cannot reach the loss.
template <typename T>
BasicTensor<T> deconv3d_forward(const BasicTensor<T>& input, const BasicDeconvLayer<T>& layer,
                                const std::vector<std::size_t>* active = nullptr) {
  detail::check_deconv(input.shape(), layer);
  const std::size_t C = input.dim(0), D = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = layer.out_channels();
  const std::size_t s = layer.ksize();
  const std::size_t M = O * s * s * s;
  const std::size_t P = D * H * W;
  const std::size_t OD = D * s, OH = H * s, OW = W * s;

  BasicTensor<T> out({O, OD, OH, OW});
  for (std::size_t o = 0; o < O; ++o)
    std::fill(out.data_ptr() + o * OD * OH * OW, out.data_ptr() + (o + 1) * OD * OH * OW, layer.bias[o]);

  // kernel transposed to (o, delta) x in_ch so each output value is one dot product.
  std::vector<T> kt(M * C);
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t m = 0; m < M; ++m) kt[m * C + i] = layer.kernel[i * M + m];

  std::vector<std::size_t> cells;
  if (active) {
    cells = *active;
  } else {
    cells.resize(P);
    std::iota(cells.begin(), cells.end(), std::size_t{0});
  }
  const T* in = input.data_ptr();
  parallel_for(cells.size(), [&](std::size_t ci) {
    const std::size_t p = cells[ci];
    const std::size_t pd = p / (H * W), ph = (p / W) % H, pw = p % W;
    std::vector<T> column(C);
    for (std::size_t i = 0; i < C; ++i) column[i] = in[i * P + p];
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t dd = 0; dd < s; ++dd)
        for (std::size_t dh = 0; dh < s; ++dh) {
          T* dst = out.data_ptr() + ((o * OD + pd * s + dd) * OH + ph * s + dh) * OW + pw * s;
          for (std::size_t dw = 0; dw < s; ++dw) {
            const std::size_t m = ((o * s + dd) * s + dh) * s + dw;
            dst[dw] = static_cast<T>(static_cast<double>(layer.bias[o]) +
                                     detail::dot_f64(kt.data() + m * C, column.data(), C));
          }
        }
  });
  return out;
}

template <typename T>
BasicLayerGrads<T> deconv3d_backward(const BasicTensor<T>& input, const BasicDeconvLayer<T>& layer,
                                     const BasicTensor<T>& grad_out, bool want_grad_input = true) {
  detail::check_deconv(input.shape(), layer);
  const std::size_t C = input.dim(0), D = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = layer.out_channels();
  const std::size_t s = layer.ksize();
  const std::size_t M = O * s * s * s;
  const std::size_t P = D * H * W;
  const std::size_t OD = D * s, OH = H * s, OW = W * s;
  const std::vector<std::size_t> expect{O, OD, OH, OW};
  if (grad_out.shape() != expect) {
    throw DimensionError("deconv3d_backward: grad_out shape " + shape_string(grad_out.shape()) +
                         " != forward output " + shape_string(expect));
  }

  BasicLayerGrads<T> res;
  res.grad_bias = BasicTensor<T>({O});
  const T* g = grad_out.data_ptr();
  for (std::size_t o = 0; o < O; ++o) {
    double sum = 0;
    for (std::size_t q = 0; q < OD * OH * OW; ++q) sum += g[o * OD * OH * OW + q];
    res.grad_bias[o] = static_cast<T>(sum);
  }

  // Gather each input cell's gradient tile as a row of length M; skip all-zero tiles.
  std::vector<std::size_t> cells;
  std::vector<T> tiles;
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t pd = p / (H * W), ph = (p / W) % H, pw = p % W;
    std::vector<T> tile(M);
    bool any = false;
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t dd = 0; dd < s; ++dd)
        for (std::size_t dh = 0; dh < s; ++dh) {
          const T* src = g + ((o * OD + pd * s + dd) * OH + ph * s + dh) * OW + pw * s;
          for (std::size_t dw = 0; dw < s; ++dw) {
            const T v = src[dw];
            tile[((o * s + dd) * s + dh) * s + dw] = v;
            any = any || v != T(0);
          }
        }
    if (any) {
      cells.push_back(p);
      tiles.insert(tiles.end(), tile.begin(), tile.end());
    }
  }

  const T* in = input.data_ptr();
  res.grad_kernel = BasicTensor<T>(layer.kernel.shape());
  parallel_for(C, [&](std::size_t i) {
    std::vector<double> acc(M, 0.0);
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      const double x = in[i * P + cells[ci]];
      if (x != 0.0) detail::axpy_f64(acc.data(), x, tiles.data() + ci * M, M);
    }
    T* dst = res.grad_kernel.data_ptr() + i * M;
    for (std::size_t m = 0; m < M; ++m) dst[m] = static_cast<T>(acc[m]);
  });

  if (want_grad_input) {
    res.grad_input = BasicTensor<T>(input.shape());
    const T* kern = layer.kernel.data_ptr();
    parallel_for(C, [&](std::size_t i) {
      for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        res.grad_input[i * P + cells[ci]] = static_cast<T>(detail::dot_f64(kern + i * M, tiles.data() + ci * M, M));
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (auto& v : y.data()) v = v > T(0) ? v : T(0);
  return y;
}

// Subgradient 0 at x == 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) throw DimensionError("relu_backward: shape mismatch");
  BasicTensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x[i] > T(0))) g[i] = T(0);
  return g;
}

// ---------------------------------------------------------------------------

// v <- momentum*v - lr*g ; p <- p + v. `velocity` is shaped on first use.
template <typename T>
void sgd_step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
              std::vector<BasicTensor<T>>& velocity, double lr, double momentum) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: parameter/gradient count mismatch");
  if (!(lr >= 0.0) || momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd_step: need lr >= 0, momentum in [0,1)");
  if (velocity.empty()) {
    for (const auto* p : params) velocity.emplace_back(p->shape());
  }
  if (velocity.size() != params.size()) throw DimensionError("sgd_step: velocity state does not match parameters");
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    const auto& g = *grads[t];
    auto& v = velocity[t];
    if (p.shape() != g.shape() || p.shape() != v.shape()) {
      throw DimensionError("sgd_step: shape mismatch at parameter " + std::to_string(t));
    }
    const T m = static_cast<T>(momentum), l = static_cast<T>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = m * v[i] - l * g[i];
      p[i] += v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates rejected by the skip predicate
  std::size_t within_1e3 = 0;

  double fraction_within_1e3() const { return checked ? static_cast<double>(within_1e3) / checked : 1.0; }
};

// Relative error with an absolute floor so that two tiny values compare as equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h against `analytic`.
// Large tensors are checked on a random subset of `max_coords` coordinates.
// `skip(i)` is consulted after both evaluations (e.g. to reject a coordinate
// whose perturbation crossed a ReLU kink).
template <typename T>
GradCheckResult grad_check_at(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& analytic,
                              BasicTensor<T> x, double step, const std::vector<std::size_t>& coords,
                              const std::function<bool(std::size_t)>& skip = {}) {
  if (analytic.shape() != x.shape()) throw DimensionError("grad_check: analytic gradient shape mismatch");
  GradCheckResult res;
  for (std::size_t i : coords) {
    if (i >= x.size()) throw DimensionError("grad_check: coordinate out of range");
    const T orig = x[i];
    x[i] = static_cast<T>(orig + step);
    const double fp = f(x);
    x[i] = static_cast<T>(orig - step);
    const double fm = f(x);
    const double h2 = static_cast<double>(static_cast<T>(orig + step)) - static_cast<double>(static_cast<T>(orig - step));
    x[i] = orig;
    if (skip && skip(i)) {
      ++res.skipped;
      continue;
    }
    const double numeric = (fp - fm) / h2;
    const double err = relative_error(static_cast<double>(analytic[i]), numeric);
    res.max_rel_error = std::max(res.max_rel_error, err);
    ++res.checked;
    if (err < 1e-3) ++res.within_1e3;
  }
  return res;
}

// Every coordinate, or max_coords of them drawn at random.
template <typename T>
GradCheckResult grad_check(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& analytic,
                           BasicTensor<T> x, double step, std::size_t max_coords = 64, std::uint64_t seed = 1,
                           const std::function<bool(std::size_t)>& skip = {}) {
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }
  return grad_check_at<T>(f, analytic, std::move(x), step, coords, skip);
}

}  // namespace voxfcn
