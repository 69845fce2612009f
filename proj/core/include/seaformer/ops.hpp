// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "seaformer/tensor.hpp"

// Differentiable tensor primitives. Every function is pure; when an input is
// tracked by the thread's active tape the op records its VJP.
//
// MAC accounting (see instrument.hpp): matmul M*K*N; add/sub/mul/scale one per
// output element; sigmoid/exp/softmax/log_softmax four per element;
// reductions one per input element; relu6 and pure data movement zero.
namespace seaformer {

/// Result shape of broadcasting `a` against `b`: shorter shape is left-padded
/// with ones, then each dim pair must be equal or contain a 1.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched matmul: [B x M x K] x [B x K x N] -> [B x M x N].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// min(max(x, 0), 6). The derivative at the two kinks is taken as 0.
template <typename T>
Tensor<T> relu6(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
/// Reductions along `axis`; the reduced dim is kept with size 1.
template <typename T>
Tensor<T> sum_along(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> mean_along(const Tensor<T>& x, std::size_t axis);
/// Ties resolve to the first maximal element, which alone receives gradient.
template <typename T>
Tensor<T> max_along(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Elements [start, start + length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);
/// Sums `x` down to `shape`, the adjoint of broadcast_to.
template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& shape);

}  // namespace seaformer
