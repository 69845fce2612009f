// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "seaformer/backbone.hpp"
#include "seaformer/losses.hpp"
#include "seaformer/nn.hpp"

// Multi-resolution distillation: a full-resolution teacher guides a student
// that sees the input at half resolution. Student stage features are
// upsampled 2x to meet the teacher's, then four losses are summed.
namespace seaformer {

enum class UpsampleKind { kBilinear, kMobileNet, kConv };

std::string_view to_string(UpsampleKind k);
UpsampleKind parse_upsample_kind(std::string_view s);

/// Doubles the spatial size of a low-resolution feature, gated by the
/// previous (higher resolution) stage:
///   mobilenet: out = MB_refine(sigmoid(BN(conv(gate))) * bilinear_2x(MB(low)))
///   conv:      out = ConvBN(sigmoid(BN(conv(gate))) * bilinear_2x(relu6(ConvBN(low))))
///   bilinear:  out = bilinear_2x(low), no parameters
template <typename T>
struct UpsampleModule {
  UpsampleKind kind = UpsampleKind::kMobileNet;
  std::size_t channels = 0;       // of low and of the output
  std::size_t gate_channels = 0;  // of the gate feature
  ConvBN<T> gate;
  MobileNetBlock<T> main, refine;  // mobilenet
  ConvBN<T> main_conv, refine_conv;  // conv

  void visit(const std::string& prefix, const ParamVisitor<T>& visitor);
};

/// MobileNet paths use expansion 4 and a 5x5 depth-wise kernel; the gate is
/// a 1x1 conv.
template <typename T>
UpsampleModule<T> make_upsample_module(UpsampleKind kind, std::size_t channels,
                                       std::size_t gate_channels, Rng& rng);

/// Requires gate dims = 2x low dims and matching channel counts, else
/// ConfigError.
template <typename T>
Tensor<T> upsample_module(const Tensor<T>& low, const Tensor<T>& gate,
                          const UpsampleModule<T>& module);

/// Student-side modules for stages 3-6 (index 0 upsamples stage 3).
template <typename T>
struct DistillHead {
  std::array<UpsampleModule<T>, 4> up;

  void visit(const std::string& prefix, const ParamVisitor<T>& visitor);
};

template <typename T>
DistillHead<T> make_distill_head(const VariantSpec& spec, UpsampleKind kind, std::uint64_t seed);

struct DistillConfig {
  UpsampleKind upsample = UpsampleKind::kMobileNet;
  bool use_cls = true;
  bool use_cross = true;
  bool use_feat = true;
  bool use_out = true;
  double temperature = 1.0;
  // Multipliers on l_cls, l_cross, l_feat, l_out. The report holds the
  // weighted terms.
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  // Student sees x_full and features are compared without upsampling.
  bool same_resolution = false;
};

/// Parses a comma-separated subset of {cls, cross, feat, out}; the listed
/// terms are enabled and the rest disabled.
void set_losses(DistillConfig& cfg, std::string_view list);

struct DistillLossReport {
  double l_cls = 0;
  double l_cross = 0;
  double l_feat = 0;
  double l_out = 0;
  double total = 0;  // l_cls + l_cross + l_feat + l_out
  bool labels_all_ignored = false;
};

void to_json(nlohmann::json& j, const DistillLossReport& r);

template <typename T>
struct DistillResult {
  Tensor<T> l_cls, l_cross, l_feat, l_out, total;  // shape [1]; taped
  DistillLossReport report;
};

/// Losses from precomputed stage features. Labels must match the teacher
/// logit resolution (teacher stage 3 size). Disabled terms are 0 and are not
/// evaluated.
template <typename T>
DistillResult<T> distill_from_features(const SeaFormerModel<T>& teacher,
                                       const SeaFormerModel<T>& student,
                                       const DistillHead<T>& head,
                                       const std::array<Tensor<T>, 6>& teacher_feats,
                                       const std::array<Tensor<T>, 6>& student_feats,
                                       const LabelMap& labels, const DistillConfig& cfg);

/// Full step: the teacher runs on x_full, the student on
/// avg_pool(x_full, 2, 2). x_full dims must be divisible by 128 (64 in
/// same-resolution mode), else InputError.
template <typename T>
DistillResult<T> distill_step(const SeaFormerModel<T>& teacher, const SeaFormerModel<T>& student,
                              const DistillHead<T>& head, const Tensor<T>& x_full,
                              const LabelMap& labels, const DistillConfig& cfg);

/// Small all-MB variant with `channels` channels in every stage; used for
/// gradient checks of the distillation path.
VariantSpec toy_distill_spec(std::size_t channels);

}  // namespace seaformer
