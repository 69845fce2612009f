// SPDX-License-Identifier: Apache-2.0
#include "seaformer/nn.hpp"

#include <algorithm>
#include <cmath>

#include "op_util.hpp"
#include "seaformer/instrument.hpp"
#include "seaformer/ops.hpp"

namespace seaformer {

using detail::taped;

namespace {

struct ConvGeom {
  std::size_t c_in, h, w, c_out, cin_g, cout_g, k, stride, pad, groups, ho, wo;
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                       std::size_t stride, std::size_t padding, std::size_t groups) {
  if (x.rank() != 3) {
    throw DimensionError("conv2d: input must be C x H x W, got " + shape_to_string(x.shape()));
  }
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw ConfigError("conv2d: weight must be C_out x C_in/g x k x k, got " +
                      shape_to_string(weight.shape()));
  }
  if (groups == 0 || stride == 0) throw ConfigError("conv2d: groups and stride must be >= 1");
  ConvGeom g{};
  g.c_in = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.c_out = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  g.groups = groups;
  if (g.k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
  if (g.c_in % groups != 0 || g.c_out % groups != 0) {
    throw ConfigError("conv2d: channels " + std::to_string(g.c_in) + "->" +
                      std::to_string(g.c_out) + " not divisible by groups " +
                      std::to_string(groups));
  }
  g.cin_g = g.c_in / groups;
  g.cout_g = g.c_out / groups;
  if (weight.dim(1) != g.cin_g) {
    throw ConfigError("conv2d: weight " + shape_to_string(weight.shape()) +
                      " does not match input channels " + std::to_string(g.c_in) + " / groups " +
                      std::to_string(groups));
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != g.c_out)) {
    throw ConfigError("conv2d: bias shape " + shape_to_string(bias.shape()) + " for " +
                      std::to_string(g.c_out) + " output channels");
  }
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw DimensionError("conv2d: input " + shape_to_string(x.shape()) + " smaller than kernel " +
                         std::to_string(g.k) + " with padding " + std::to_string(g.pad));
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

// Output index range [lo, hi) along one axis for which input index
// o*stride + kk - pad lies inside [0, n).
inline void valid_range(std::size_t n, std::size_t out_n, std::size_t kk, std::size_t stride,
                        std::size_t pad, std::size_t& lo, std::size_t& hi) {
  const long long s = static_cast<long long>(stride);
  const long long off = static_cast<long long>(kk) - static_cast<long long>(pad);
  long long first = off >= 0 ? 0 : (-off + s - 1) / s;
  long long last_in = static_cast<long long>(n) - 1 - off;  // o*s <= last_in
  long long last = last_in < 0 ? -1 : last_in / s;
  last = std::min<long long>(last, static_cast<long long>(out_n) - 1);
  lo = static_cast<std::size_t>(std::max<long long>(first, 0));
  hi = last < first ? lo : static_cast<std::size_t>(last + 1);
}

// Visits every (x index, w index, out index) triple of the convolution,
// grouped so the innermost loop runs along output columns.
template <typename F>
void conv_loop(const ConvGeom& g, F&& f) {
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    for (std::size_t col = 0; col < g.cout_g; ++col) {
      const std::size_t co = grp * g.cout_g + col;
      for (std::size_t cil = 0; cil < g.cin_g; ++cil) {
        const std::size_t ci = grp * g.cin_g + cil;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          std::size_t oy0, oy1;
          valid_range(g.h, g.ho, ky, g.stride, g.pad, oy0, oy1);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t ox0, ox1;
            valid_range(g.w, g.wo, kx, g.stride, g.pad, ox0, ox1);
            if (ox0 >= ox1) continue;
            const std::size_t wi = ((co * g.cin_g + cil) * g.k + ky) * g.k + kx;
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              const std::size_t xrow = (ci * g.h + iy) * g.w;
              const std::size_t orow = (co * g.ho + oy) * g.wo;
              f(xrow + kx - g.pad, wi, orow, ox0, ox1);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward_kernel(const ConvGeom& g, const T* x, const T* w, T* out) {
  if (g.k == 1 && g.stride == 1 && g.pad == 0 && g.groups == 1) {
    const std::size_t hw = g.h * g.w;
    for (std::size_t co = 0; co < g.c_out; ++co) {
      T* orow = out + co * hw;
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        const T wv = w[co * g.c_in + ci];
        const T* xrow = x + ci * hw;
        for (std::size_t p = 0; p < hw; ++p) orow[p] += wv * xrow[p];
      }
    }
    return;
  }
  const std::size_t s = g.stride;
  conv_loop(g, [&](std::size_t xbase, std::size_t wi, std::size_t obase, std::size_t ox0,
                   std::size_t ox1) {
    const T wv = w[wi];
    // xbase + ox*s may underflow for ox < ox0 but is only read inside range.
    for (std::size_t ox = ox0; ox < ox1; ++ox) out[obase + ox] += wv * x[xbase + ox * s];
  });
}

}  // namespace

template <typename T>
Conv2dParams<T> make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                          std::size_t groups, Rng& rng, bool with_bias) {
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0) {
    throw ConfigError("make_conv: channels " + std::to_string(c_in) + "->" +
                      std::to_string(c_out) + " not divisible by groups " +
                      std::to_string(groups));
  }
  Conv2dParams<T> p;
  const double fan_in = static_cast<double>(c_in / groups * k * k);
  const double bound = std::sqrt(6.0 / fan_in);
  p.weight = uniform_tensor<T>(Shape{c_out, c_in / groups, k, k}, -bound, bound, rng);
  if (with_bias) p.bias = uniform_tensor<T>(Shape{c_out}, -bound, bound, rng);
  p.stride = stride;
  p.padding = k / 2;
  p.groups = groups;
  return p;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding, std::size_t groups) {
  const ConvGeom g = conv_geometry(x, weight, bias, stride, padding, groups);
  Tensor<T> out(Shape{g.c_out, g.ho, g.wo});
  record_macs("conv2d", static_cast<std::uint64_t>(g.c_out) * g.cin_g * g.k * g.k * g.ho * g.wo);
  if (!shape_only()) {
    conv_forward_kernel(g, x.values().data(), weight.values().data(), out.values().data());
    if (!bias.empty()) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        for (std::size_t p = 0; p < g.ho * g.wo; ++p) out[co * g.ho * g.wo + p] += bias[co];
      }
    }
  }
  return taped("conv2d", std::move(out), {&x, &weight, &bias}, [&] {
    return VjpFn<T>([g, x = x.detached(), w = weight.detached(),
                     has_bias = !bias.empty()](const Tensor<T>& grad) {
      Tensor<T> gx(x.shape()), gw(w.shape()), gb;
      const std::size_t s = g.stride;
      const T* gp = grad.values().data();
      const T* xp = x.values().data();
      const T* wp = w.values().data();
      T* gxp = gx.values().data();
      T* gwp = gw.values().data();
      conv_loop(g, [&](std::size_t xbase, std::size_t wi, std::size_t obase, std::size_t ox0,
                       std::size_t ox1) {
        const T wv = wp[wi];
        T acc = 0;
        for (std::size_t ox = ox0; ox < ox1; ++ox) {
          const T gv = gp[obase + ox];
          gxp[xbase + ox * s] += wv * gv;
          acc += xp[xbase + ox * s] * gv;
        }
        gwp[wi] += acc;
      });
      if (has_bias) {
        gb = Tensor<T>(Shape{g.c_out});
        for (std::size_t co = 0; co < g.c_out; ++co) {
          for (std::size_t p = 0; p < g.ho * g.wo; ++p) gb[co] += gp[co * g.ho * g.wo + p];
        }
      }
      return std::vector<Tensor<T>>{std::move(gx), std::move(gw), std::move(gb)};
    });
  });
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::identity(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor<T>(Shape{channels}, T{1});
  p.beta = Tensor<T>(Shape{channels}, T{0});
  p.running_mean = Tensor<T>(Shape{channels}, T{0});
  p.running_var = Tensor<T>(Shape{channels}, T{1});
  return p;
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const BatchNormParams<T>& p) {
  if (x.rank() != 3) {
    throw DimensionError("batchnorm: input must be C x H x W, got " + shape_to_string(x.shape()));
  }
  const std::size_t c = x.dim(0);
  for (const Tensor<T>* t : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) {
    if (t->shape() != Shape{c}) {
      throw ConfigError("batchnorm: parameter shape " + shape_to_string(t->shape()) + " for " +
                        std::to_string(c) + " channels");
    }
  }
  if (!(p.eps > 0)) throw ConfigError("batchnorm: eps must be positive");
  const std::size_t hw = x.dim(1) * x.dim(2);
  std::vector<T> inv(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (p.running_var[ch] < 0) throw ConfigError("batchnorm: negative running variance");
    inv[ch] = T{1} / std::sqrt(p.running_var[ch] + static_cast<T>(p.eps));
  }
  Tensor<T> out(x.shape());
  record_macs("batchnorm", out.numel());
  if (!shape_only()) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T a = p.gamma[ch] * inv[ch];
      const T b = p.beta[ch] - a * p.running_mean[ch];
      for (std::size_t i = ch * hw; i < (ch + 1) * hw; ++i) out[i] = a * x[i] + b;
    }
  }
  return taped("batchnorm", std::move(out), {&x, &p.gamma, &p.beta}, [&] {
    return VjpFn<T>([x = x.detached(), gamma = p.gamma.detached(),
                     mean = p.running_mean.detached(), inv, hw, c](const Tensor<T>& g) {
      Tensor<T> gx(x.shape()), gg(Shape{c}), gbeta(Shape{c});
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T a = gamma[ch] * inv[ch];
        for (std::size_t i = ch * hw; i < (ch + 1) * hw; ++i) {
          gx[i] = g[i] * a;
          gg[ch] += g[i] * (x[i] - mean[ch]) * inv[ch];
          gbeta[ch] += g[i];
        }
      }
      return std::vector<Tensor<T>>{std::move(gx), std::move(gg), std::move(gbeta)};
    });
  });
}

namespace {

struct Lerp {
  std::size_t i0, i1;
  double frac;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
  std::vector<Lerp> table(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    table[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return table;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) {
    throw DimensionError("bilinear_resize: input must be C x H x W, got " +
                         shape_to_string(x.shape()));
  }
  if (out_h == 0 || out_w == 0) throw ArgumentError("bilinear_resize: output dims must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h == h && out_w == w) {
    return taped("bilinear_resize", x.detached(), {&x}, [] {
      return VjpFn<T>([](const Tensor<T>& g) { return std::vector<Tensor<T>>{g.detached()}; });
    });
  }
  const auto ty = lerp_table(h, out_h);
  const auto tx = lerp_table(w, out_w);
  Tensor<T> out(Shape{c, out_h, out_w});
  record_macs("bilinear", 4 * static_cast<std::uint64_t>(out.numel()));
  if (!shape_only()) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x.values().data() + ch * h * w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const T fy = static_cast<T>(ty[oy].frac);
        const T* r0 = src + ty[oy].i0 * w;
        const T* r1 = src + ty[oy].i1 * w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const T fx = static_cast<T>(tx[ox].frac);
          const T top = r0[tx[ox].i0] * (1 - fx) + r0[tx[ox].i1] * fx;
          const T bot = r1[tx[ox].i0] * (1 - fx) + r1[tx[ox].i1] * fx;
          out[(ch * out_h + oy) * out_w + ox] = top * (1 - fy) + bot * fy;
        }
      }
    }
  }
  return taped("bilinear_resize", std::move(out), {&x}, [&] {
    return VjpFn<T>([shape = x.shape(), ty, tx, out_h, out_w](const Tensor<T>& g) {
      const std::size_t c = shape[0], h = shape[1], w = shape[2];
      Tensor<T> gx(shape);
      for (std::size_t ch = 0; ch < c; ++ch) {
        T* dst = gx.values().data() + ch * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const T fy = static_cast<T>(ty[oy].frac);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const T fx = static_cast<T>(tx[ox].frac);
            const T gv = g[(ch * out_h + oy) * out_w + ox];
            dst[ty[oy].i0 * w + tx[ox].i0] += gv * (1 - fy) * (1 - fx);
            dst[ty[oy].i0 * w + tx[ox].i1] += gv * (1 - fy) * fx;
            dst[ty[oy].i1 * w + tx[ox].i0] += gv * fy * (1 - fx);
            dst[ty[oy].i1 * w + tx[ox].i1] += gv * fy * fx;
          }
        }
      }
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
  if (x.rank() != 3) {
    throw DimensionError("avg_pool2d: input must be C x H x W, got " + shape_to_string(x.shape()));
  }
  if (k == 0 || stride == 0) throw ArgumentError("avg_pool2d: window and stride must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < k || w < k) {
    throw DimensionError("avg_pool2d: window " + std::to_string(k) + " larger than input " +
                         shape_to_string(x.shape()));
  }
  const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  const T inv = T{1} / static_cast<T>(k * k);
  Tensor<T> out(Shape{c, ho, wo});
  record_macs("avg_pool", static_cast<std::uint64_t>(out.numel()) * k * k);
  auto each = [=](auto&& f) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              f((ch * ho + oy) * wo + ox, (ch * h + oy * stride + ky) * w + ox * stride + kx);
  };
  if (!shape_only()) {
    each([&](std::size_t o, std::size_t i) { out[o] += x[i] * inv; });
  }
  return taped("avg_pool2d", std::move(out), {&x}, [&] {
    return VjpFn<T>([shape = x.shape(), each, inv](const Tensor<T>& g) {
      Tensor<T> gx(shape);
      each([&](std::size_t o, std::size_t i) { gx[i] += g[o] * inv; });
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 3) {
    throw DimensionError("global_avg_pool: input must be C x H x W, got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t c = x.dim(0);
  return reshape(mean_along(reshape(x, Shape{c, x.dim(1) * x.dim(2)}), 1), Shape{c});
}

template <typename T>
void visit_bn(const std::string& prefix, BatchNormParams<T>& bn, const ParamVisitor<T>& visitor) {
  visitor(join_name(prefix, "gamma"), ParamRole::kBnGamma, bn.gamma);
  visitor(join_name(prefix, "beta"), ParamRole::kBnBeta, bn.beta);
  visitor(join_name(prefix, "running_mean"), ParamRole::kBnRunningMean, bn.running_mean);
  visitor(join_name(prefix, "running_var"), ParamRole::kBnRunningVar, bn.running_var);
}

template <typename T>
void ConvBN<T>::visit(const std::string& prefix, const ParamVisitor<T>& visitor) {
  visitor(join_name(prefix, "conv.weight"), ParamRole::kWeight, conv.weight);
  if (!conv.bias.empty()) visitor(join_name(prefix, "conv.bias"), ParamRole::kBias, conv.bias);
  visit_bn(join_name(prefix, "bn"), bn, visitor);
}

template <typename T>
ConvBN<T> make_conv_bn(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                       std::size_t groups, Rng& rng) {
  return ConvBN<T>{make_conv<T>(c_in, c_out, k, stride, groups, rng),
                   BatchNormParams<T>::identity(c_out)};
}

std::size_t mb_hidden_channels(std::size_t c_in, double expansion) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(c_in) * expansion));
}

template <typename T>
void MobileNetBlock<T>::visit(const std::string& prefix, const ParamVisitor<T>& visitor) {
  if (has_expand) expand.visit(join_name(prefix, "expand"), visitor);
  depthwise.visit(join_name(prefix, "depthwise"), visitor);
  project.visit(join_name(prefix, "project"), visitor);
}

template <typename T>
MobileNetBlock<T> make_mobilenet_block(std::size_t c_in, const MobileNetBlockSpec& spec, Rng& rng) {
  if (spec.expansion < 1.0 || spec.out_channels == 0 || (spec.stride != 1 && spec.stride != 2) ||
      spec.kernel % 2 == 0) {
    throw ConfigError("mobilenet block: invalid spec");
  }
  MobileNetBlock<T> b;
  b.spec = spec;
  b.in_channels = c_in;
  const std::size_t hidden = mb_hidden_channels(c_in, spec.expansion);
  b.has_expand = hidden != c_in || spec.expansion != 1.0;
  if (b.has_expand) b.expand = make_conv_bn<T>(c_in, hidden, 1, 1, 1, rng);
  b.depthwise = make_conv_bn<T>(hidden, hidden, spec.kernel, spec.stride, hidden, rng);
  b.project = make_conv_bn<T>(hidden, spec.out_channels, 1, 1, 1, rng);
  return b;
}

template <typename T>
Tensor<T> mobilenet_block(const Tensor<T>& x, const MobileNetBlock<T>& block) {
  if (x.rank() != 3 || x.dim(0) != block.in_channels) {
    throw ConfigError("mobilenet block expects " + std::to_string(block.in_channels) +
                      " input channels, got " + shape_to_string(x.shape()));
  }
  const std::size_t hidden = block.depthwise.conv.weight.dim(0);
  const bool shapes_ok =
      block.depthwise.conv.kernel() == block.spec.kernel &&
      block.depthwise.conv.stride == block.spec.stride && block.depthwise.conv.groups == hidden &&
      block.project.conv.out_channels() == block.spec.out_channels &&
      block.project.conv.weight.dim(1) == hidden &&
      (block.has_expand ? block.expand.conv.out_channels() == hidden &&
                              block.expand.conv.weight.dim(1) == block.in_channels
                        : hidden == block.in_channels);
  if (!shapes_ok) throw ConfigError("mobilenet block: parameter shapes do not match spec");
  Tensor<T> h = block.has_expand ? relu6(block.expand.forward(x)) : x;
  h = relu6(block.depthwise.forward(h));
  h = block.project.forward(h);
  return block.residual() ? add(x, h) : h;
}

#define SEAFORMER_INSTANTIATE_NN(T)                                                             \
  template Conv2dParams<T> make_conv(std::size_t, std::size_t, std::size_t, std::size_t,        \
                                     std::size_t, Rng&, bool);                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                            std::size_t, std::size_t);                                          \
  template struct BatchNormParams<T>;                                                           \
  template Tensor<T> batchnorm_infer(const Tensor<T>&, const BatchNormParams<T>&);              \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                         \
  template void visit_bn(const std::string&, BatchNormParams<T>&, const ParamVisitor<T>&);      \
  template struct ConvBN<T>;                                                                    \
  template ConvBN<T> make_conv_bn(std::size_t, std::size_t, std::size_t, std::size_t,           \
                                  std::size_t, Rng&);                                           \
  template struct MobileNetBlock<T>;                                                            \
  template MobileNetBlock<T> make_mobilenet_block(std::size_t, const MobileNetBlockSpec&, Rng&); \
  template Tensor<T> mobilenet_block(const Tensor<T>&, const MobileNetBlock<T>&);

SEAFORMER_INSTANTIATE_NN(float)
SEAFORMER_INSTANTIATE_NN(double)

}  // namespace seaformer
