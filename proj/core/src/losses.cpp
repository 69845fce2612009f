// SPDX-License-Identifier: Apache-2.0
#include "seaformer/losses.hpp"

#include <algorithm>
#include <cmath>

#include "op_util.hpp"
#include "seaformer/errors.hpp"
#include "seaformer/ops.hpp"

namespace seaformer {

using detail::taped;

LabelMap LabelMap::from_tensor(const Tensor<float>& t) {
  Shape s = t.shape();
  if (s.size() == 3 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 2) {
    throw ArgumentError("label map must be H x W, got " + shape_to_string(t.shape()));
  }
  LabelMap m;
  m.h = s[0];
  m.w = s[1];
  m.values.reserve(t.numel());
  for (float v : t.values()) {
    if (!std::isfinite(v) || v != std::round(v)) {
      throw ArgumentError("label map contains non-integer value " + std::to_string(v));
    }
    m.values.push_back(static_cast<std::int32_t>(v));
  }
  return m;
}

namespace {

template <typename T>
void check_same_maps(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected equal C x H x W shapes, got " +
                         shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> feature_similarity_loss(const Tensor<T>& student, const Tensor<T>& teacher) {
  check_same_maps(student, teacher, "feature_similarity_loss");
  const std::size_t c = student.dim(0), p = student.dim(1) * student.dim(2);
  // Per position: dot, |s|^2, |t|^2.
  std::vector<T> dot(p, 0), ns(p, 0), nt(p, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < p; ++i) {
      const T a = student[ch * p + i], b = teacher[ch * p + i];
      dot[i] += a * b;
      ns[i] += a * a;
      nt[i] += b * b;
    }
  }
  // sqrt(|s|^2 |t|^2) rather than |s| |t| so identical vectors give exactly 1.
  std::vector<T> denom(p, 0);
  T total = 0;
  for (std::size_t i = 0; i < p; ++i) {
    denom[i] = std::sqrt(ns[i] * nt[i]);
    if (denom[i] > 0) total -= dot[i] / denom[i];
  }
  Tensor<T> out(Shape{1}, total / static_cast<T>(p));
  return taped("feature_similarity_loss", std::move(out), {&student, &teacher}, [&] {
    return VjpFn<T>([s = student.detached(), t = teacher.detached(), dot, ns, nt, denom, c,
                     p](const Tensor<T>& g) {
      Tensor<T> gs(s.shape()), gt(t.shape());
      const T k = -g[0] / static_cast<T>(p);
      for (std::size_t i = 0; i < p; ++i) {
        if (!(denom[i] > 0)) continue;
        const T cosv = dot[i] / denom[i];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T a = s[ch * p + i], b = t[ch * p + i];
          gs[ch * p + i] = k * (b / denom[i] - cosv * a / ns[i]);
          gt[ch * p + i] = k * (a / denom[i] - cosv * b / nt[i]);
        }
      }
      return std::vector<Tensor<T>>{std::move(gs), std::move(gt)};
    });
  });
}

template <typename T>
Tensor<T> output_similarity_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                                 double temperature) {
  check_same_maps(student_logits, teacher_logits, "output_similarity_loss");
  if (!(temperature > 0)) throw ArgumentError("output_similarity_loss: temperature must be > 0");
  const T inv_tau = static_cast<T>(1.0 / temperature);
  const Tensor<T> ls = log_softmax(temperature == 1.0 ? student_logits
                                                      : scale(student_logits, inv_tau),
                                   0);
  const Tensor<T> lt = log_softmax(temperature == 1.0 ? teacher_logits
                                                      : scale(teacher_logits, inv_tau),
                                   0);
  const std::size_t positions = student_logits.dim(1) * student_logits.dim(2);
  return scale(sum(mul(exp(lt), sub(lt, ls))), T{1} / static_cast<T>(positions));
}

template <typename T>
CrossEntropyResult<T> cross_entropy_loss(const Tensor<T>& logits, const LabelMap& labels) {
  if (logits.rank() != 3 || logits.dim(1) != labels.h || logits.dim(2) != labels.w) {
    throw DimensionError("cross_entropy_loss: logits " + shape_to_string(logits.shape()) +
                         " vs labels " + std::to_string(labels.h) + "x" +
                         std::to_string(labels.w));
  }
  const std::size_t k = logits.dim(0), p = labels.h * labels.w;
  if (labels.values.size() != p) throw DimensionError("cross_entropy_loss: label map size");
  std::size_t counted = 0;
  for (auto l : labels.values) {
    if (l == kIgnoreLabel) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw ArgumentError("cross_entropy_loss: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(k) + ")");
    }
    ++counted;
  }
  CrossEntropyResult<T> res;
  res.counted = counted;
  res.all_ignored = counted == 0;
  // Per-position softmax over classes.
  std::vector<T> prob(k * p);
  T total = 0;
  for (std::size_t i = 0; i < p; ++i) {
    T m = logits[i];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, logits[c * p + i]);
    T z = 0;
    for (std::size_t c = 0; c < k; ++c) {
      prob[c * p + i] = std::exp(logits[c * p + i] - m);
      z += prob[c * p + i];
    }
    for (std::size_t c = 0; c < k; ++c) prob[c * p + i] /= z;
    const auto l = labels.values[i];
    if (l != kIgnoreLabel) total += -(logits[static_cast<std::size_t>(l) * p + i] - m - std::log(z));
  }
  Tensor<T> out(Shape{1}, counted == 0 ? T{0} : total / static_cast<T>(counted));
  res.loss = taped("cross_entropy_loss", std::move(out), {&logits}, [&] {
    return VjpFn<T>([prob = std::move(prob), shape = logits.shape(), values = labels.values, k, p,
                     counted](const Tensor<T>& g) {
      Tensor<T> gx(shape);
      if (counted == 0) return std::vector<Tensor<T>>{std::move(gx)};
      const T s = g[0] / static_cast<T>(counted);
      for (std::size_t i = 0; i < p; ++i) {
        if (values[i] == kIgnoreLabel) continue;
        for (std::size_t c = 0; c < k; ++c) gx[c * p + i] = s * prob[c * p + i];
        gx[static_cast<std::size_t>(values[i]) * p + i] -= s;
      }
      return std::vector<Tensor<T>>{std::move(gx)};
    });
  });
  return res;
}

#define SEAFORMER_INSTANTIATE_LOSSES(T)                                                  \
  template Tensor<T> feature_similarity_loss(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> output_similarity_loss(const Tensor<T>&, const Tensor<T>&, double); \
  template CrossEntropyResult<T> cross_entropy_loss(const Tensor<T>&, const LabelMap&);

SEAFORMER_INSTANTIATE_LOSSES(float)
SEAFORMER_INSTANTIATE_LOSSES(double)

}  // namespace seaformer
