// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "seaformer/attention.hpp"
#include "seaformer/nn.hpp"
#include "seaformer/tensor.hpp"

namespace seaformer {

/// softmax(scale * q k^T) v per batch entry, without materializing the
/// attention matrix: q is B x N x d, k is B x M x d, v is B x M x dv.
/// Counts B * (N*M*d + 4*N*M + N*M*dv) MACs.
template <typename T>
Tensor<T> dense_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale);

enum class BaselineKind { kGlobal, kWindow, kAxial };

std::string_view to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(std::string_view s);

/// q/k/v and output projections; channel and head fields come from an
/// AttentionConfig (modes are ignored).
template <typename T>
struct BaselineParams {
  ConvBN<T> to_q, to_k, to_v, proj;

  void visit(const std::string& prefix, const ParamVisitor<T>& visitor);
};

template <typename T>
BaselineParams<T> make_baseline_params(const AttentionConfig& cfg, Rng& rng);

/// Multi-head attention over all positions (global), over independent
/// window x window tiles (window), or along rows plus along columns (axial).
template <typename T>
Tensor<T> baseline_attention(const Tensor<T>& x, BaselineKind kind, std::size_t window,
                             const AttentionConfig& cfg, const BaselineParams<T>& params);

}  // namespace seaformer
