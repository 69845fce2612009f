// SPDX-License-Identifier: Apache-2.0
#include "seaformer/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "op_util.hpp"
#include "seaformer/errors.hpp"
#include "seaformer/instrument.hpp"
#include "seaformer/ops.hpp"

namespace seaformer {

using detail::taped;

namespace {

// Fills p[0..m) with softmax(scale * q_i . k_j) for one query row.
template <typename T>
void attention_row(const T* qi, const T* kb, std::size_t m, std::size_t d, T scale, T* p) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    T s = 0;
    const T* kj = kb + j * d;
    for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
    p[j] = s * scale;
    mx = std::max(mx, p[j]);
  }
  T total = 0;
  for (std::size_t j = 0; j < m; ++j) {
    p[j] = std::exp(p[j] - mx);
    total += p[j];
  }
  for (std::size_t j = 0; j < m; ++j) p[j] /= total;
}

}  // namespace

template <typename T>
Tensor<T> dense_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) ||
      k.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1)) {
    throw DimensionError("dense_attention: incompatible q " + shape_to_string(q.shape()) + ", k " +
                         shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  const std::size_t b = q.dim(0), n = q.dim(1), m = k.dim(1), d = q.dim(2), dv = v.dim(2);
  Tensor<T> out(Shape{b, n, dv});
  record_macs("attention", static_cast<std::uint64_t>(b) * n * m * (d + 4 + dv));
  if (!shape_only()) {
    std::vector<T> p(m);
    for (std::size_t bi = 0; bi < b; ++bi) {
      const T* kb = k.values().data() + bi * m * d;
      const T* vb = v.values().data() + bi * m * dv;
      for (std::size_t i = 0; i < n; ++i) {
        attention_row(q.values().data() + (bi * n + i) * d, kb, m, d, scale, p.data());
        T* oi = out.values().data() + (bi * n + i) * dv;
        for (std::size_t j = 0; j < m; ++j) {
          const T pj = p[j];
          const T* vj = vb + j * dv;
          for (std::size_t t = 0; t < dv; ++t) oi[t] += pj * vj[t];
        }
      }
    }
  }
  return taped("dense_attention", std::move(out), {&q, &k, &v}, [&] {
    return VjpFn<T>([q = q.detached(), k = k.detached(), v = v.detached(), scale, b, n, m, d,
                     dv](const Tensor<T>& g) {
      Tensor<T> gq(q.shape()), gk(k.shape()), gv(v.shape());
      std::vector<T> p(m), dp(m);
      for (std::size_t bi = 0; bi < b; ++bi) {
        const T* kb = k.values().data() + bi * m * d;
        const T* vb = v.values().data() + bi * m * dv;
        T* gkb = gk.values().data() + bi * m * d;
        T* gvb = gv.values().data() + bi * m * dv;
        for (std::size_t i = 0; i < n; ++i) {
          const T* qi = q.values().data() + (bi * n + i) * d;
          const T* gi = g.values().data() + (bi * n + i) * dv;
          attention_row(qi, kb, m, d, scale, p.data());
          T dot = 0;
          for (std::size_t j = 0; j < m; ++j) {
            T s = 0;
            for (std::size_t t = 0; t < dv; ++t) {
              s += gi[t] * vb[j * dv + t];
              gvb[j * dv + t] += p[j] * gi[t];
            }
            dp[j] = s;
            dot += p[j] * s;
          }
          T* gqi = gq.values().data() + (bi * n + i) * d;
          for (std::size_t j = 0; j < m; ++j) {
            const T ds = p[j] * (dp[j] - dot) * scale;
            for (std::size_t t = 0; t < d; ++t) {
              gqi[t] += ds * kb[j * d + t];
              gkb[j * d + t] += ds * qi[t];
            }
          }
        }
      }
      return std::vector<Tensor<T>>{std::move(gq), std::move(gk), std::move(gv)};
    });
  });
}

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kGlobal:
      return "global";
    case BaselineKind::kWindow:
      return "window";
    case BaselineKind::kAxial:
      return "axial";
  }
  return "unknown";
}

BaselineKind parse_baseline_kind(std::string_view s) {
  if (s == "global") return BaselineKind::kGlobal;
  if (s == "window") return BaselineKind::kWindow;
  if (s == "axial") return BaselineKind::kAxial;
  throw ConfigError("unknown attention kind '" + std::string(s) +
                    "' (valid: global, window, axial)");
}

template <typename T>
void BaselineParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& visitor) {
  to_q.visit(join_name(prefix, "to_q"), visitor);
  to_k.visit(join_name(prefix, "to_k"), visitor);
  to_v.visit(join_name(prefix, "to_v"), visitor);
  proj.visit(join_name(prefix, "proj"), visitor);
}

template <typename T>
BaselineParams<T> make_baseline_params(const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  BaselineParams<T> p;
  p.to_q = make_conv_bn<T>(cfg.channels, cfg.key_dim, 1, 1, 1, rng);
  p.to_k = make_conv_bn<T>(cfg.channels, cfg.key_dim, 1, 1, 1, rng);
  p.to_v = make_conv_bn<T>(cfg.channels, cfg.value_dim, 1, 1, 1, rng);
  p.proj = make_conv_bn<T>(cfg.value_dim, cfg.channels, 1, 1, 1, rng);
  return p;
}

namespace {

// Token layouts. Channels split as channel = head * d + j.
template <typename T>
Tensor<T> global_tokens(const Tensor<T>& x, std::size_t heads) {
  const std::size_t d = x.dim(0) / heads, hw = x.dim(1) * x.dim(2);
  return permute(reshape(x, Shape{heads, d, hw}), {0, 2, 1});
}

template <typename T>
Tensor<T> global_untokens(const Tensor<T>& y, std::size_t heads, std::size_t h, std::size_t w) {
  const std::size_t dv = y.dim(2);
  return reshape(permute(y, {0, 2, 1}), Shape{heads * dv, h, w});
}

template <typename T>
Tensor<T> window_tokens(const Tensor<T>& x, std::size_t heads, std::size_t m) {
  const std::size_t d = x.dim(0) / heads, nh = x.dim(1) / m, nw = x.dim(2) / m;
  Tensor<T> t = permute(reshape(x, Shape{heads, d, nh, m, nw, m}), {0, 2, 4, 3, 5, 1});
  return reshape(t, Shape{heads * nh * nw, m * m, d});
}

template <typename T>
Tensor<T> window_untokens(const Tensor<T>& y, std::size_t heads, std::size_t m, std::size_t h,
                          std::size_t w) {
  const std::size_t dv = y.dim(2), nh = h / m, nw = w / m;
  Tensor<T> t = permute(reshape(y, Shape{heads, nh, nw, m, m, dv}), {0, 5, 1, 3, 2, 4});
  return reshape(t, Shape{heads * dv, h, w});
}

}  // namespace

template <typename T>
Tensor<T> baseline_attention(const Tensor<T>& x, BaselineKind kind, std::size_t window,
                             const AttentionConfig& cfg, const BaselineParams<T>& params) {
  if (x.rank() != 3 || x.dim(0) != cfg.channels) {
    throw ConfigError("baseline attention: input " + shape_to_string(x.shape()) + " for " +
                      std::to_string(cfg.channels) + " channels");
  }
  cfg.validate();
  const std::size_t h = x.dim(1), w = x.dim(2), heads = cfg.heads;
  if (kind == BaselineKind::kWindow && (window == 0 || h % window != 0 || w % window != 0)) {
    throw ConfigError("window attention: " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by window " + std::to_string(window));
  }
  Tensor<T> q, k, v;
  {
    MacLabel label("proj");
    q = params.to_q.forward(x);
    k = params.to_k.forward(x);
    v = params.to_v.forward(x);
  }
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_key_dim())));
  Tensor<T> y;
  switch (kind) {
    case BaselineKind::kGlobal:
      y = global_untokens(dense_attention(global_tokens(q, heads), global_tokens(k, heads),
                                          global_tokens(v, heads), sc),
                          heads, h, w);
      break;
    case BaselineKind::kWindow:
      y = window_untokens(dense_attention(window_tokens(q, heads, window),
                                          window_tokens(k, heads, window),
                                          window_tokens(v, heads, window), sc),
                          heads, window, h, w);
      break;
    case BaselineKind::kAxial: {
      const std::size_t d = cfg.head_key_dim(), dv = cfg.head_value_dim();
      // Rows: one sequence of length W per (head, row).
      auto rows = [&](const Tensor<T>& t, std::size_t dd) {
        return reshape(permute(reshape(t, Shape{heads, dd, h, w}), {0, 2, 3, 1}),
                       Shape{heads * h, w, dd});
      };
      auto cols = [&](const Tensor<T>& t, std::size_t dd) {
        return reshape(permute(reshape(t, Shape{heads, dd, h, w}), {0, 3, 2, 1}),
                       Shape{heads * w, h, dd});
      };
      Tensor<T> yr = dense_attention(rows(q, d), rows(k, d), rows(v, dv), sc);
      Tensor<T> yc = dense_attention(cols(q, d), cols(k, d), cols(v, dv), sc);
      yr = reshape(permute(reshape(yr, Shape{heads, h, w, dv}), {0, 3, 1, 2}),
                   Shape{heads * dv, h, w});
      yc = reshape(permute(reshape(yc, Shape{heads, w, h, dv}), {0, 3, 2, 1}),
                   Shape{heads * dv, h, w});
      y = add(yr, yc);
      break;
    }
  }
  MacLabel label("proj");
  return params.proj.forward(y);
}

#define SEAFORMER_INSTANTIATE_BASELINES(T)                                                   \
  template Tensor<T> dense_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template struct BaselineParams<T>;                                                         \
  template BaselineParams<T> make_baseline_params(const AttentionConfig&, Rng&);             \
  template Tensor<T> baseline_attention(const Tensor<T>&, BaselineKind, std::size_t,         \
                                        const AttentionConfig&, const BaselineParams<T>&);

SEAFORMER_INSTANTIATE_BASELINES(float)
SEAFORMER_INSTANTIATE_BASELINES(double)

}  // namespace seaformer
