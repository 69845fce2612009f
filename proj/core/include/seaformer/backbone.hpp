// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "seaformer/attention.hpp"
#include "seaformer/nn.hpp"
#include "seaformer/tensor.hpp"

namespace seaformer {

/// One layer tuple: Conv(k, c_out, s), MB(k, e, c_out, s) or
/// Sea(n_layers, heads). `ffn_ratio` of a Sea entry is 0 for "stage default".
struct LayerEntry {
  enum class Kind { kConv, kMB, kSea };
  Kind kind = Kind::kConv;
  std::size_t kernel = 3;
  double expansion = 1.0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t ffn_ratio = 0;

  static LayerEntry conv(std::size_t k, std::size_t c_out, std::size_t s);
  static LayerEntry mb(std::size_t k, double e, std::size_t c_out, std::size_t s);
  static LayerEntry sea(std::size_t n, std::size_t heads, std::size_t ffn_ratio = 0);
};

bool operator==(const LayerEntry& a, const LayerEntry& b);

/// Sea layer FFN expansion when an entry leaves it unset: 4 in the last
/// stage, 2 elsewhere.
std::size_t default_ffn_ratio(std::size_t stage_index);

struct VariantSpec {
  std::string name;
  std::array<std::vector<LayerEntry>, 6> stages;
  std::array<std::size_t, 2> fusion_dims{};

  /// Output channels of stage i (0-based).
  std::size_t stage_channels(std::size_t i) const;
  void validate() const;
};

bool operator==(const VariantSpec& a, const VariantSpec& b);

/// Built-in T / S / B / L tables. Unknown names raise ConfigError listing the
/// valid ones.
VariantSpec variant_spec(std::string_view name);
const std::vector<std::string>& variant_names();

/// JSON layout: {"name": ..., "stages": [[entry, ...] x 6], "fusion_dims": [m1, m2]}
/// with entries ["Conv", k, c, s], ["MB", k, e, c, s], ["Sea", n, heads]
/// (optionally a fourth Sea element for the FFN ratio).
void to_json(nlohmann::json& j, const VariantSpec& spec);
void from_json(const nlohmann::json& j, VariantSpec& spec);

enum class Task { kSeg, kCls };
enum class FusionMode { kSigmoidMul, kAdd, kMul, kSigmoidAdd };

std::string_view to_string(Task t);
Task parse_task(std::string_view s);
std::string_view to_string(FusionMode m);
FusionMode parse_fusion_mode(std::string_view s);

/// Build-time switches for ablations. Attention modes apply to every Sea
/// layer.
struct ModelOptions {
  FusionMode fusion = FusionMode::kSigmoidMul;
  SqueezeMode squeeze_mode = SqueezeMode::kMeanPool;
  EnhanceMode enhance_mode = EnhanceMode::kMul;
  EnhanceInput enhance_input = EnhanceInput::kConcatQkv;
  std::size_t pos_embed_len = 16;
};

template <typename T>
struct StageLayer {
  LayerEntry entry;
  ConvBN<T> conv;                            // Conv entries, followed by relu6
  MobileNetBlock<T> mb;                      // MB entries
  AttentionConfig attn;                      // Sea entries
  std::vector<SeaformerLayerParams<T>> sea;  // Sea entries
};

template <typename T>
struct FusionParams {
  ConvBN<T> spatial;  // c_spatial -> M
  ConvBN<T> context;  // c_context -> M

  void visit(const std::string& prefix, const ParamVisitor<T>& visitor);
};

template <typename T>
FusionParams<T> make_fusion_params(std::size_t c_spatial, std::size_t c_context, std::size_t m,
                                   Rng& rng);

/// Projects both inputs to M channels and merges them at the spatial
/// resolution; the context path is bilinearly upsampled.
template <typename T>
Tensor<T> fusion_block(const Tensor<T>& spatial, const Tensor<T>& context,
                       const FusionParams<T>& params, FusionMode mode);

template <typename T>
struct SeaFormerModel {
  VariantSpec spec;
  ModelOptions options;
  Task task = Task::kSeg;
  std::size_t num_classes = 0;
  std::array<std::vector<StageLayer<T>>, 6> stages;
  FusionParams<T> fuse1, fuse2;  // seg only
  ConvBN<T> head_hidden, head_out;  // seg only
  Tensor<T> cls_weight, cls_bias;  // cls only

  void visit(const std::string& prefix, const ParamVisitor<T>& visitor);
};

template <typename T>
SeaFormerModel<T> build_model(const VariantSpec& spec, std::size_t num_classes, Task task,
                              std::uint64_t seed, const ModelOptions& options = {});

template <typename T>
SeaFormerModel<T> build_variant(std::string_view name, std::size_t num_classes, Task task,
                                std::uint64_t seed, const ModelOptions& options = {});

struct ForwardOptions {
  bool skip_sea = false;  // treat every Sea entry as identity
};

/// Runs stage `index` (0-based) on its input.
template <typename T>
Tensor<T> stage_forward(const SeaFormerModel<T>& model, std::size_t index, const Tensor<T>& x,
                        const ForwardOptions& fwd = {});

/// Outputs of all six stages. Input must be 3 x H x W with H, W divisible
/// by 64.
template <typename T>
std::array<Tensor<T>, 6> forward_stages(const SeaFormerModel<T>& model, const Tensor<T>& x,
                                        const ForwardOptions& fwd = {});

/// Stages 1-3: the shared 1/8-scale feature. H, W must be divisible by 8.
template <typename T>
Tensor<T> stem_forward(const SeaFormerModel<T>& model, const Tensor<T>& x);

/// Stages 4-6 on x_s: features at 1/16, 1/32, 1/64.
template <typename T>
std::array<Tensor<T>, 3> context_branch_forward(const SeaFormerModel<T>& model,
                                                const Tensor<T>& x_s,
                                                const ForwardOptions& fwd = {});

/// Fusion of (spatial, stage 5, stage 6) followed by the light head.
template <typename T>
Tensor<T> seg_head_forward(const SeaFormerModel<T>& model, const Tensor<T>& spatial,
                           const Tensor<T>& ctx5, const Tensor<T>& ctx6);

template <typename T>
Tensor<T> seg_forward(const SeaFormerModel<T>& model, const Tensor<T>& x,
                      const ForwardOptions& fwd = {});

/// Input must be 3 x H x W with H, W divisible by 32.
template <typename T>
Tensor<T> cls_forward(const SeaFormerModel<T>& model, const Tensor<T>& x,
                      const ForwardOptions& fwd = {});

/// Trainable parameter count keyed by top-level component (stage1..stage6,
/// fusion1, fusion2, head, classifier) plus "total".
template <typename T>
std::map<std::string, std::uint64_t> param_breakdown(SeaFormerModel<T>& model);

/// MACs of one forward at h x w, counted without arithmetic, keyed by the
/// same components as param_breakdown plus "total".
template <typename T>
std::map<std::string, std::uint64_t> mac_breakdown(const SeaFormerModel<T>& model, std::size_t h,
                                                   std::size_t w);

}  // namespace seaformer
