// SPDX-License-Identifier: Apache-2.0
#include "seaformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "op_util.hpp"
#include "seaformer/instrument.hpp"

namespace seaformer {

using detail::AxisSplit;
using detail::check_axis;
using detail::split_at;
using detail::taped;

namespace {

/// Strides that read an operand of shape `in` while walking `out`; broadcast
/// dims get stride 0.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t pad = out.size() - in.size();
  Shape padded(pad, 1);
  padded.insert(padded.end(), in.begin(), in.end());
  auto strides = row_major_strides(padded);
  for (std::size_t d = 0; d < out.size(); ++d) {
    if (padded[d] == 1 && out[d] != 1) strides[d] = 0;
  }
  return strides;
}

/// Calls f(out_index, a_index, b_index) over every element of `out`.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// C (+)= op(A) * op(B) on raw row-major buffers; C is M x N.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T where A is M x K and B is N x K.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
  }
}

// C += A^T * B where A is K x M and B is K x N.
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary_kernel(const Tensor<T>& a, const Tensor<T>& b, Binary op) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  if (shape_only()) return out;
  auto apply = [op](T x, T y) {
    switch (op) {
      case Binary::kAdd:
        return x + y;
      case Binary::kSub:
        return x - y;
      case Binary::kMul:
        return x * y;
    }
    return T{0};
  };
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = apply(a[i], b[i]);
    return out;
  }
  for_each_broadcast(out_shape, broadcast_strides(a.shape(), out_shape),
                     broadcast_strides(b.shape(), out_shape),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) {
                       out[i] = apply(a[ia], b[ib]);
                     });
  return out;
}

template <typename T>
Tensor<T> sum_to_kernel(const Tensor<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x.detached();
  if (broadcast_shape(shape, x.shape()) != x.shape()) {
    throw DimensionError("sum_to: " + shape_to_string(x.shape()) + " cannot reduce to " +
                         shape_to_string(shape));
  }
  Tensor<T> out(shape);
  if (shape_only()) return out;
  const std::vector<std::size_t> zero(x.rank(), 0);
  for_each_broadcast(x.shape(), broadcast_strides(shape, x.shape()), zero,
                     [&](std::size_t i, std::size_t io, std::size_t) { out[io] += x[i]; });
  return out;
}

template <typename T>
Tensor<T> broadcast_kernel(const Tensor<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x.detached();
  if (shape.size() < x.rank() || broadcast_shape(x.shape(), shape) != shape) {
    throw DimensionError("broadcast_to: " + shape_to_string(x.shape()) + " cannot expand to " +
                         shape_to_string(shape));
  }
  Tensor<T> out(shape);
  if (shape_only()) return out;
  const std::vector<std::size_t> zero(shape.size(), 0);
  for_each_broadcast(shape, broadcast_strides(x.shape(), shape), zero,
                     [&](std::size_t i, std::size_t ix, std::size_t) { out[i] = x[ix]; });
  return out;
}

template <typename T>
Tensor<T> softmax_kernel(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor<T> out(x.shape());
  if (shape_only()) return out;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) m = std::max(m, x[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const T e = std::exp(x[base + j * s.inner] - m);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return out;
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
  return inv;
}

template <typename T>
Tensor<T> permute_kernel(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  if (order.size() != x.rank()) {
    throw ArgumentError("permute: order has " + std::to_string(order.size()) +
                        " entries for rank " + std::to_string(x.rank()));
  }
  std::vector<bool> seen(order.size(), false);
  for (auto o : order) {
    if (o >= order.size() || seen[o]) throw ArgumentError("permute: order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(order.size());
  const auto in_strides = row_major_strides(x.shape());
  std::vector<std::size_t> strides(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out_shape[i] = x.shape()[order[i]];
    strides[i] = in_strides[order[i]];
  }
  Tensor<T> out(out_shape);
  if (shape_only()) return out;
  const std::vector<std::size_t> zero(order.size(), 0);
  for_each_broadcast(out_shape, strides, zero,
                     [&](std::size_t i, std::size_t ix, std::size_t) { out[i] = x[ix]; });
  return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t da = d + a.size() >= rank ? a[d + a.size() - rank] : 1;
    const std::size_t db = d + b.size() >= rank ? b[d + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                           " are not broadcastable");
    }
    out[d] = std::max(da, db);
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  record_macs("matmul", static_cast<std::uint64_t>(m) * k * n);
  if (!shape_only()) gemm_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  return taped("matmul", std::move(out), {&a, &b}, [&] {
    return VjpFn<T>([a = a.detached(), b = b.detached(), m, k, n](const Tensor<T>& g) {
      Tensor<T> ga(a.shape()), gb(b.shape());
      gemm_nt(g.values().data(), b.values().data(), ga.values().data(), m, n, k);
      gemm_tn(a.values().data(), g.values().data(), gb.values().data(), k, m, n);
      return std::vector<Tensor<T>>{std::move(ga), std::move(gb)};
    });
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<T> out(Shape{bs, m, n});
  record_macs("matmul", static_cast<std::uint64_t>(bs) * m * k * n);
  if (!shape_only()) {
    for (std::size_t i = 0; i < bs; ++i) {
      gemm_nn(a.values().data() + i * m * k, b.values().data() + i * k * n,
              out.values().data() + i * m * n, m, k, n);
    }
  }
  return taped("bmm", std::move(out), {&a, &b}, [&] {
    return VjpFn<T>([a = a.detached(), b = b.detached(), bs, m, k, n](const Tensor<T>& g) {
      Tensor<T> ga(a.shape()), gb(b.shape());
      for (std::size_t i = 0; i < bs; ++i) {
        const T* gi = g.values().data() + i * m * n;
        gemm_nt(gi, b.values().data() + i * k * n, ga.values().data() + i * m * k, m, n, k);
        gemm_tn(a.values().data() + i * m * k, gi, gb.values().data() + i * k * n, k, m, n);
      }
      return std::vector<Tensor<T>>{std::move(ga), std::move(gb)};
    });
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = binary_kernel(a, b, Binary::kAdd);
  record_macs("add", out.numel());
  return taped("add", std::move(out), {&a, &b}, [&] {
    return VjpFn<T>([sa = a.shape(), sb = b.shape()](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{sum_to_kernel(g, sa), sum_to_kernel(g, sb)};
    });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = binary_kernel(a, b, Binary::kSub);
  record_macs("add", out.numel());
  return taped("sub", std::move(out), {&a, &b}, [&] {
    return VjpFn<T>([sa = a.shape(), sb = b.shape()](const Tensor<T>& g) {
      Tensor<T> gb = sum_to_kernel(g, sb);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
      return std::vector<Tensor<T>>{sum_to_kernel(g, sa), std::move(gb)};
    });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = binary_kernel(a, b, Binary::kMul);
  record_macs("mul", out.numel());
  return taped("mul", std::move(out), {&a, &b}, [&] {
    return VjpFn<T>([a = a.detached(), b = b.detached()](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{sum_to_kernel(binary_kernel(g, b, Binary::kMul), a.shape()),
                                    sum_to_kernel(binary_kernel(g, a, Binary::kMul), b.shape())};
    });
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  record_macs("scale", out.numel());
  if (!shape_only()) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * factor;
  }
  return taped("scale", std::move(out), {&x}, [&] {
    return VjpFn<T>([factor](const Tensor<T>& g) {
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * factor;
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  record_macs("sigmoid", 4 * static_cast<std::uint64_t>(out.numel()));
  if (!shape_only()) {
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const T v = x[i];
      if (v >= 0) {
        out[i] = T{1} / (T{1} + std::exp(-v));
      } else {
        const T e = std::exp(v);
        out[i] = e / (T{1} + e);
      }
    }
  }
  return taped("sigmoid", std::move(out), {&x}, [&](const Tensor<T>& result) {
    return VjpFn<T>([s = result.detached()](const Tensor<T>& g) {
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * s[i] * (T{1} - s[i]);
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> relu6(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  if (!shape_only()) {
    const bool rec = branch_recording();
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const T v = x[i];
      out[i] = std::min(std::max(v, T{0}), T{6});
      if (rec) record_branch(v <= 0 ? 0u : (v >= 6 ? 2u : 1u));
    }
  }
  return taped("relu6", std::move(out), {&x}, [&] {
    return VjpFn<T>([x = x.detached()](const Tensor<T>& g) {
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) {
        gx[i] = (x[i] > 0 && x[i] < 6) ? g[i] : T{0};
      }
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  record_macs("exp", 4 * static_cast<std::uint64_t>(out.numel()));
  if (!shape_only()) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(x[i]);
  }
  return taped("exp", std::move(out), {&x}, [&](const Tensor<T>& result) {
    return VjpFn<T>([e = result.detached()](const Tensor<T>& g) {
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * e[i];
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  check_axis(axis, x.rank(), "softmax");
  Tensor<T> out = softmax_kernel(x, axis);
  record_macs("softmax", 4 * static_cast<std::uint64_t>(out.numel()));
  return taped("softmax", std::move(out), {&x}, [&](const Tensor<T>& result) {
    return VjpFn<T>([s = result.detached(), axis](const Tensor<T>& g) {
      const AxisSplit sp = split_at(s.shape(), axis);
      Tensor<T> gx(s.shape());
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.n * sp.inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < sp.n; ++j) {
            dot += g[base + j * sp.inner] * s[base + j * sp.inner];
          }
          for (std::size_t j = 0; j < sp.n; ++j) {
            const std::size_t at = base + j * sp.inner;
            gx[at] = s[at] * (g[at] - dot);
          }
        }
      }
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  check_axis(axis, x.rank(), "log_softmax");
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor<T> out(x.shape());
  record_macs("softmax", 4 * static_cast<std::uint64_t>(out.numel()));
  if (!shape_only()) {
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.n * sp.inner + in;
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < sp.n; ++j) m = std::max(m, x[base + j * sp.inner]);
        T total = 0;
        for (std::size_t j = 0; j < sp.n; ++j) total += std::exp(x[base + j * sp.inner] - m);
        const T lse = m + std::log(total);
        for (std::size_t j = 0; j < sp.n; ++j) {
          out[base + j * sp.inner] = x[base + j * sp.inner] - lse;
        }
      }
    }
  }
  return taped("log_softmax", std::move(out), {&x}, [&](const Tensor<T>& result) {
    return VjpFn<T>([y = result.detached(), axis](const Tensor<T>& g) {
      const AxisSplit s = split_at(y.shape(), axis);
      Tensor<T> gx(y.shape());
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          T gsum = 0;
          for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t at = base + j * s.inner;
            gx[at] = g[at] - std::exp(y[at]) * gsum;
          }
        }
      }
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out(Shape{1});
  record_macs("reduce", x.numel());
  if (!shape_only()) {
    T total = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) total += x[i];
    out[0] = total;
  }
  return taped("sum", std::move(out), {&x}, [&] {
    return VjpFn<T>([shape = x.shape()](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{Tensor<T>(shape, g[0])};
    });
  });
}

template <typename T>
Tensor<T> sum_along(const Tensor<T>& x, std::size_t axis) {
  check_axis(axis, x.rank(), "sum_along");
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  Tensor<T> out = sum_to_kernel(x, out_shape);
  record_macs("reduce", x.numel());
  return taped("sum_along", std::move(out), {&x}, [&] {
    return VjpFn<T>([shape = x.shape()](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{broadcast_kernel(g, shape)};
    });
  });
}

template <typename T>
Tensor<T> mean_along(const Tensor<T>& x, std::size_t axis) {
  check_axis(axis, x.rank(), "mean_along");
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  const T inv = T{1} / static_cast<T>(x.shape()[axis]);
  Tensor<T> out = sum_to_kernel(x, out_shape);
  if (!shape_only()) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  }
  record_macs("reduce", x.numel());
  return taped("mean_along", std::move(out), {&x}, [&] {
    return VjpFn<T>([shape = x.shape(), inv](const Tensor<T>& g) {
      Tensor<T> gx = broadcast_kernel(g, shape);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= inv;
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> max_along(const Tensor<T>& x, std::size_t axis) {
  check_axis(axis, x.rank(), "max_along");
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  Tensor<T> out(out_shape);
  std::vector<std::size_t> argmax(out.numel(), 0);
  record_macs("reduce", x.numel());
  if (!shape_only()) {
    const bool rec = branch_recording();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        std::size_t best = 0;
        for (std::size_t j = 1; j < s.n; ++j) {
          if (x[base + j * s.inner] > x[base + best * s.inner]) best = j;
        }
        out[o * s.inner + in] = x[base + best * s.inner];
        argmax[o * s.inner + in] = base + best * s.inner;
        if (rec) record_branch(static_cast<std::uint32_t>(best));
      }
    }
  }
  return taped("max_along", std::move(out), {&x}, [&] {
    return VjpFn<T>([shape = x.shape(), argmax = std::move(argmax)](const Tensor<T>& g) {
      Tensor<T> gx(shape);
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  return taped("reshape", std::move(out), {&x}, [&] {
    return VjpFn<T>([orig = x.shape()](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{
          Tensor<T>(orig, std::vector<T>(g.values().begin(), g.values().end()))};
    });
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  Tensor<T> out = permute_kernel(x, order);
  return taped("permute", std::move(out), {&x}, [&] {
    return VjpFn<T>([inv = inverse_permutation(order)](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{permute_kernel(g, inv)};
    });
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  const Shape& first = parts.front().shape();
  check_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t d = 0; ok && d < first.size(); ++d) {
      if (d != axis && p.shape()[d] != first[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: " + shape_to_string(p.shape()) + " incompatible with " +
                           shape_to_string(first) + " along axis " + std::to_string(axis));
    }
    sizes.push_back(p.shape()[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  Tensor<T> out(out_shape);
  const AxisSplit s = split_at(out_shape, axis);
  if (!shape_only()) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::size_t dst = o * s.n * s.inner;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::size_t block = sizes[p] * s.inner;
        std::copy_n(parts[p].values().begin() + o * block, block, out.values().begin() + dst);
        dst += block;
      }
    }
  }
  std::vector<const Tensor<T>*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return detail::taped_n("concat", std::move(out), inputs, [&] {
    return VjpFn<T>([sizes, s, shapes = [&] {
                       std::vector<Shape> v;
                       for (const auto& p : parts) v.push_back(p.shape());
                       return v;
                     }()](const Tensor<T>& g) {
      std::vector<Tensor<T>> grads;
      for (const auto& sh : shapes) grads.emplace_back(sh);
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::size_t src = o * s.n * s.inner;
        for (std::size_t p = 0; p < sizes.size(); ++p) {
          const std::size_t block = sizes[p] * s.inner;
          std::copy_n(g.values().begin() + src, block, grads[p].values().begin() + o * block);
          src += block;
        }
      }
      return grads;
    });
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis(axis, x.rank(), "slice");
  if (length == 0 || start + length > x.shape()[axis]) {
    throw ArgumentError("slice: [" + std::to_string(start) + ", " +
                        std::to_string(start + length) + ") out of range for " +
                        shape_to_string(x.shape()) + " axis " + std::to_string(axis));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  if (!shape_only()) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(x.values().begin() + (o * s.n + start) * s.inner, length * s.inner,
                  out.values().begin() + o * length * s.inner);
    }
  }
  return taped("slice", std::move(out), {&x}, [&] {
    return VjpFn<T>([shape = x.shape(), s, start, length](const Tensor<T>& g) {
      Tensor<T> gx(shape);
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(g.values().begin() + o * length * s.inner, length * s.inner,
                    gx.values().begin() + (o * s.n + start) * s.inner);
      }
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  Tensor<T> out = broadcast_kernel(x, shape);
  return taped("broadcast_to", std::move(out), {&x}, [&] {
    return VjpFn<T>([orig = x.shape()](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{sum_to_kernel(g, orig)};
    });
  });
}

template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& shape) {
  Tensor<T> out = sum_to_kernel(x, shape);
  return taped("sum_to", std::move(out), {&x}, [&] {
    return VjpFn<T>([orig = x.shape()](const Tensor<T>& g) {
      return std::vector<Tensor<T>>{broadcast_kernel(g, orig)};
    });
  });
}

#define SEAFORMER_INSTANTIATE_OPS(T)                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                        \
  template Tensor<T> relu6(const Tensor<T>&);                                          \
  template Tensor<T> exp(const Tensor<T>&);                                            \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> sum(const Tensor<T>&);                                            \
  template Tensor<T> sum_along(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> mean_along(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> max_along(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                 \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);               \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);   \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                     \
  template Tensor<T> sum_to(const Tensor<T>&, const Shape&);

SEAFORMER_INSTANTIATE_OPS(float)
SEAFORMER_INSTANTIATE_OPS(double)

}  // namespace seaformer
