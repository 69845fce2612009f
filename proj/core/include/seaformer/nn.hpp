// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "seaformer/params.hpp"
#include "seaformer/tensor.hpp"

// Convolution and normalization building blocks. Feature maps are C x H x W
// (no batch dimension).
namespace seaformer {

/// Seeded generator. Uniform draws use the top 53 bits of mt19937_64, so
/// streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // C_out x C_in/groups x k x k
  Tensor<T> bias;    // C_out, or empty for no bias
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }
};

/// k x k conv with padding k/2 and weights uniform in +-sqrt(6 / fan_in).
template <typename T>
Conv2dParams<T> make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                          std::size_t groups, Rng& rng, bool with_bias = false);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding, std::size_t groups);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
  return conv2d(x, p.weight, p.bias, p.stride, p.padding, p.groups);
}

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = 1e-5;

  /// gamma 1, beta 0, mean 0, var 1.
  static BatchNormParams identity(std::size_t channels);
};

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const BatchNormParams<T>& p);

/// Half-pixel (align-corners = false) bilinear resampling with edge clamping.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Mean over k x k windows, no padding.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k, std::size_t stride);

/// Global average over H and W: C x H x W -> C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Conv followed by inference-mode BN (convs in this library carry no bias).
template <typename T>
struct ConvBN {
  Conv2dParams<T> conv;
  BatchNormParams<T> bn;

  Tensor<T> forward(const Tensor<T>& x) const { return batchnorm_infer(conv2d(x, conv), bn); }
  void visit(const std::string& prefix, const ParamVisitor<T>& visitor);
};

template <typename T>
ConvBN<T> make_conv_bn(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                       std::size_t groups, Rng& rng);

template <typename T>
void visit_bn(const std::string& prefix, BatchNormParams<T>& bn, const ParamVisitor<T>& visitor);

struct MobileNetBlockSpec {
  std::size_t kernel = 3;
  double expansion = 1.0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
};

/// round(c_in * expansion).
std::size_t mb_hidden_channels(std::size_t c_in, double expansion);

/// Inverted residual: 1x1 expand + BN + relu6 (omitted when expansion is 1),
/// k x k depth-wise with stride + BN + relu6, 1x1 project + BN, plus the
/// input when stride is 1 and channels are preserved.
template <typename T>
struct MobileNetBlock {
  MobileNetBlockSpec spec;
  std::size_t in_channels = 0;
  bool has_expand = false;
  ConvBN<T> expand;
  ConvBN<T> depthwise;
  ConvBN<T> project;

  bool residual() const { return spec.stride == 1 && in_channels == spec.out_channels; }
  void visit(const std::string& prefix, const ParamVisitor<T>& visitor);
};

template <typename T>
MobileNetBlock<T> make_mobilenet_block(std::size_t c_in, const MobileNetBlockSpec& spec, Rng& rng);

template <typename T>
Tensor<T> mobilenet_block(const Tensor<T>& x, const MobileNetBlock<T>& block);

}  // namespace seaformer
