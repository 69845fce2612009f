// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "seaformer/nn.hpp"
#include "seaformer/tensor.hpp"

namespace seaformer {

enum class SqueezeMode { kMeanPool, kMaxPool, kAdaptive };
enum class EnhanceMode { kMul, kAdd, kOff };
enum class EnhanceInput { kConcatQkv, kConvX, kUpconvX };
enum class Axis { kHorizontal, kVertical };

std::string_view to_string(SqueezeMode m);
std::string_view to_string(EnhanceMode m);
std::string_view to_string(EnhanceInput m);
SqueezeMode parse_squeeze_mode(std::string_view s);
EnhanceMode parse_enhance_mode(std::string_view s);
EnhanceInput parse_enhance_input(std::string_view s);

/// Shape and mode parameters of one SEA attention block. The adaptive squeeze
/// mode also selects adaptive expansion; pooling modes expand by broadcast.
struct AttentionConfig {
  std::size_t channels = 0;   // C
  std::size_t key_dim = 0;    // C_qk, total over heads
  std::size_t value_dim = 0;  // C_v, total over heads
  std::size_t heads = 1;
  std::size_t pos_embed_len = 16;
  SqueezeMode squeeze_mode = SqueezeMode::kMeanPool;
  EnhanceMode enhance_mode = EnhanceMode::kMul;
  EnhanceInput enhance_input = EnhanceInput::kConcatQkv;

  /// Throws ConfigError on violated invariants.
  void validate() const;

  std::size_t head_key_dim() const { return key_dim / heads; }
  std::size_t head_value_dim() const { return value_dim / heads; }
  /// Channel count of the enhancement source (2 C_qk + C_v, or C for conv_x).
  std::size_t enhance_source_channels() const;

  /// Defaults used by the backbone: per-head key dim is C / heads rounded to
  /// a multiple of 8 (at least 8), C_v = 2 C_qk.
  static AttentionConfig for_channels(std::size_t channels, std::size_t heads);
};

bool operator==(const AttentionConfig& a, const AttentionConfig& b);

void to_json(nlohmann::json& j, const AttentionConfig& cfg);
void from_json(const nlohmann::json& j, AttentionConfig& cfg);

template <typename T>
struct SeaAttentionParams {
  ConvBN<T> to_q, to_k, to_v;
  // Position tables, L x C_qk each.
  Tensor<T> pos_q_h, pos_k_h, pos_q_v, pos_k_v;
  // Adaptive mode only: per-axis 1-channel mask heads on x.
  ConvBN<T> squeeze_mask_h, squeeze_mask_v;
  ConvBN<T> expand_mask_h, expand_mask_v;
  ConvBN<T> proj;  // C_v -> C
  // Enhancement kernel; absent when enhance_mode is off.
  ConvBN<T> enh_source;  // conv_x / upconv_x only
  ConvBN<T> enh_dw;
  Conv2dParams<T> enh_pw;
  BatchNormParams<T> enh_bn;

  void visit(const AttentionConfig& cfg, const std::string& prefix,
             const ParamVisitor<T>& visitor);
};

/// Position tables are drawn uniform in +-0.02; convs per nn defaults.
template <typename T>
SeaAttentionParams<T> make_sea_params(const AttentionConfig& cfg, Rng& rng);

/// Linear interpolation (half-pixel) of an L x D table to n x D; exact copy
/// when n == L.
template <typename T>
Tensor<T> interpolate_pos(const Tensor<T>& table, std::size_t n);

/// C x H x W -> axis_len x C. Horizontal squeezes along W (one token per
/// row), vertical along H. `mask_logits` (1 x H x W) is required for
/// adaptive mode and softmax-normalized along the squeezed axis.
template <typename T>
Tensor<T> squeeze_axis(const Tensor<T>& x, Axis axis, SqueezeMode mode,
                       const Tensor<T>* mask_logits = nullptr);

/// axis_len x C -> C x H x W. Without a mask each token is copied across its
/// row (horizontal) or column (vertical); with a 1 x H x W mask each copy is
/// scaled by the mask value at its position.
template <typename T>
Tensor<T> expand_axis(const Tensor<T>& y, Axis axis, std::size_t h, std::size_t w,
                      const Tensor<T>* mask = nullptr);

/// Multi-head softmax attention over one axial sequence:
/// q, k: N x C_qk, v: N x C_v. Optional position terms (N x C_qk) are added
/// to q and k. If `weights` is given it receives the heads x N x N
/// attention matrix.
template <typename T>
Tensor<T> axial_attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       std::size_t heads, const Tensor<T>* pos_q = nullptr,
                       const Tensor<T>* pos_k = nullptr, Tensor<T>* weights = nullptr);

/// Enhancement weights in (0, 1), shape C x H x W.
template <typename T>
Tensor<T> detail_enhancement(const Tensor<T>& x, const Tensor<T>& q, const Tensor<T>& k,
                             const Tensor<T>& v, const AttentionConfig& cfg,
                             const SeaAttentionParams<T>& params);

/// Intermediate values exposed for property tests.
template <typename T>
struct SeaTrace {
  Tensor<T> attn_h, attn_v;             // heads x N x N
  Tensor<T> squeeze_w_h, squeeze_w_v;   // normalized masks, adaptive only
  Tensor<T> semantic;                   // C_v x H x W, before projection
};

struct SeaForwardOptions {
  bool use_pos_embed = true;
};

template <typename T>
Tensor<T> sea_attention_forward(const Tensor<T>& x, const AttentionConfig& cfg,
                                const SeaAttentionParams<T>& params,
                                const SeaForwardOptions& options = {},
                                SeaTrace<T>* trace = nullptr);

template <typename T>
struct SeaformerLayerParams {
  SeaAttentionParams<T> attn;
  ConvBN<T> ffn_expand, ffn_dw, ffn_project;

  void visit(const AttentionConfig& cfg, const std::string& prefix,
             const ParamVisitor<T>& visitor);
};

template <typename T>
SeaformerLayerParams<T> make_layer_params(const AttentionConfig& cfg, std::size_t ffn_ratio,
                                          Rng& rng);

/// x + SEA(x), then + FFN (1x1 expand + BN, 3x3 depth-wise + BN, relu6,
/// 1x1 project + BN).
template <typename T>
Tensor<T> seaformer_layer(const Tensor<T>& x, const AttentionConfig& cfg,
                          const SeaformerLayerParams<T>& params);

}  // namespace seaformer
