// SPDX-License-Identifier: Apache-2.0
#include "seaformer/distill.hpp"

#include <nlohmann/json.hpp>

#include "seaformer/errors.hpp"
#include "seaformer/ops.hpp"

namespace seaformer {

std::string_view to_string(UpsampleKind k) {
  switch (k) {
    case UpsampleKind::kBilinear:
      return "bilinear";
    case UpsampleKind::kMobileNet:
      return "mobilenet";
    case UpsampleKind::kConv:
      return "conv";
  }
  return "?";
}

UpsampleKind parse_upsample_kind(std::string_view s) {
  if (s == "bilinear") return UpsampleKind::kBilinear;
  if (s == "mobilenet") return UpsampleKind::kMobileNet;
  if (s == "conv") return UpsampleKind::kConv;
  throw ConfigError("unknown upsample module '" + std::string(s) +
                    "' (valid: bilinear, mobilenet, conv)");
}

template <typename T>
void UpsampleModule<T>::visit(const std::string& prefix, const ParamVisitor<T>& visitor) {
  switch (kind) {
    case UpsampleKind::kBilinear:
      return;
    case UpsampleKind::kMobileNet:
      gate.visit(join_name(prefix, "gate"), visitor);
      main.visit(join_name(prefix, "main"), visitor);
      refine.visit(join_name(prefix, "refine"), visitor);
      return;
    case UpsampleKind::kConv:
      gate.visit(join_name(prefix, "gate"), visitor);
      main_conv.visit(join_name(prefix, "main"), visitor);
      refine_conv.visit(join_name(prefix, "refine"), visitor);
      return;
  }
}

template <typename T>
UpsampleModule<T> make_upsample_module(UpsampleKind kind, std::size_t channels,
                                       std::size_t gate_channels, Rng& rng) {
  UpsampleModule<T> m;
  m.kind = kind;
  m.channels = channels;
  m.gate_channels = gate_channels;
  if (kind == UpsampleKind::kBilinear) return m;
  m.gate = make_conv_bn<T>(gate_channels, channels, 1, 1, 1, rng);
  if (kind == UpsampleKind::kMobileNet) {
    const MobileNetBlockSpec spec{5, 4.0, channels, 1};
    m.main = make_mobilenet_block<T>(channels, spec, rng);
    m.refine = make_mobilenet_block<T>(channels, spec, rng);
  } else {
    m.main_conv = make_conv_bn<T>(channels, channels, 3, 1, 1, rng);
    m.refine_conv = make_conv_bn<T>(channels, channels, 3, 1, 1, rng);
  }
  return m;
}

template <typename T>
Tensor<T> upsample_module(const Tensor<T>& low, const Tensor<T>& gate,
                          const UpsampleModule<T>& module) {
  if (low.rank() != 3 || gate.rank() != 3 || gate.dim(1) != 2 * low.dim(1) ||
      gate.dim(2) != 2 * low.dim(2)) {
    throw ConfigError("upsample_module: gate " + shape_to_string(gate.shape()) +
                      " must be twice the spatial size of low " + shape_to_string(low.shape()));
  }
  if (low.dim(0) != module.channels ||
      (module.kind != UpsampleKind::kBilinear && gate.dim(0) != module.gate_channels)) {
    throw ConfigError("upsample_module: channel mismatch (low " + shape_to_string(low.shape()) +
                      ", gate " + shape_to_string(gate.shape()) + ")");
  }
  const std::size_t h = gate.dim(1), w = gate.dim(2);
  switch (module.kind) {
    case UpsampleKind::kBilinear:
      return bilinear_resize(low, h, w);
    case UpsampleKind::kMobileNet: {
      const Tensor<T> weights = sigmoid(module.gate.forward(gate));
      const Tensor<T> main = bilinear_resize(mobilenet_block(low, module.main), h, w);
      return mobilenet_block(mul(weights, main), module.refine);
    }
    case UpsampleKind::kConv: {
      const Tensor<T> weights = sigmoid(module.gate.forward(gate));
      const Tensor<T> main = bilinear_resize(relu6(module.main_conv.forward(low)), h, w);
      return module.refine_conv.forward(mul(weights, main));
    }
  }
  return {};
}

template <typename T>
void DistillHead<T>::visit(const std::string& prefix, const ParamVisitor<T>& visitor) {
  for (std::size_t i = 0; i < up.size(); ++i) {
    up[i].visit(join_name(prefix, "up" + std::to_string(i + 3)), visitor);
  }
}

template <typename T>
DistillHead<T> make_distill_head(const VariantSpec& spec, UpsampleKind kind, std::uint64_t seed) {
  Rng rng(seed);
  DistillHead<T> head;
  for (std::size_t i = 0; i < 4; ++i) {
    head.up[i] = make_upsample_module<T>(kind, spec.stage_channels(i + 2),
                                         spec.stage_channels(i + 1), rng);
  }
  return head;
}

void set_losses(DistillConfig& cfg, std::string_view list) {
  cfg.use_cls = cfg.use_cross = cfg.use_feat = cfg.use_out = false;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t end = std::min(list.find(',', pos), list.size());
    const std::string_view item = list.substr(pos, end - pos);
    if (item == "cls") {
      cfg.use_cls = true;
    } else if (item == "cross") {
      cfg.use_cross = true;
    } else if (item == "feat") {
      cfg.use_feat = true;
    } else if (item == "out") {
      cfg.use_out = true;
    } else if (!item.empty()) {
      throw ConfigError("unknown loss '" + std::string(item) + "' (valid: cls, cross, feat, out)");
    }
    pos = end + 1;
  }
}

void to_json(nlohmann::json& j, const DistillLossReport& r) {
  j = nlohmann::json{{"l_cls", r.l_cls},   {"l_cross", r.l_cross},
                     {"l_feat", r.l_feat}, {"l_out", r.l_out},
                     {"total", r.total},   {"labels_all_ignored", r.labels_all_ignored}};
}

template <typename T>
DistillResult<T> distill_from_features(const SeaFormerModel<T>& teacher,
                                       const SeaFormerModel<T>& student,
                                       const DistillHead<T>& head,
                                       const std::array<Tensor<T>, 6>& teacher_feats,
                                       const std::array<Tensor<T>, 6>& student_feats,
                                       const LabelMap& labels, const DistillConfig& cfg) {
  if (teacher.spec.stages != student.spec.stages) {
    throw ConfigError("distillation needs teacher and student of the same variant family");
  }
  // Student stages 3..6 brought to teacher resolution.
  std::array<Tensor<T>, 4> up;
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor<T>& low = student_feats[i + 2];
    up[i] = cfg.same_resolution ? low : upsample_module(low, student_feats[i + 1], head.up[i]);
    if (up[i].shape() != teacher_feats[i + 2].shape()) {
      throw DimensionError("student stage " + std::to_string(i + 3) + " aligns to " +
                           shape_to_string(up[i].shape()) + " but teacher has " +
                           shape_to_string(teacher_feats[i + 2].shape()));
    }
  }

  DistillResult<T> r;
  const Tensor<T> zero(Shape{1});
  auto weighted = [&](const Tensor<T>& t, std::size_t i) {
    return cfg.weights[i] == 1.0 ? t : scale(t, static_cast<T>(cfg.weights[i]));
  };
  Tensor<T> student_logits;
  if (cfg.use_cls || cfg.use_out) student_logits = seg_head_forward(student, up[0], up[2], up[3]);

  r.l_cls = zero;
  if (cfg.use_cls) {
    auto ce = cross_entropy_loss(student_logits, labels);
    r.report.labels_all_ignored = ce.all_ignored;
    r.l_cls = weighted(ce.loss, 0);
  }
  r.l_cross = zero;
  if (cfg.use_cross) {
    auto ce = cross_entropy_loss(seg_head_forward(teacher, up[0], up[2], up[3]), labels);
    r.report.labels_all_ignored = r.report.labels_all_ignored || ce.all_ignored;
    r.l_cross = weighted(ce.loss, 1);
  }
  r.l_feat = zero;
  if (cfg.use_feat) {
    // Aligned stages: the three context-branch outputs.
    Tensor<T> acc = feature_similarity_loss(up[1], teacher_feats[3]);
    acc = add(acc, feature_similarity_loss(up[2], teacher_feats[4]));
    acc = add(acc, feature_similarity_loss(up[3], teacher_feats[5]));
    r.l_feat = weighted(scale(acc, T{1} / T{3}), 2);
  }
  r.l_out = zero;
  if (cfg.use_out) {
    const Tensor<T> teacher_logits =
        seg_head_forward(teacher, teacher_feats[2], teacher_feats[4], teacher_feats[5]);
    r.l_out = weighted(output_similarity_loss(student_logits, teacher_logits, cfg.temperature), 3);
  }
  r.total = add(add(r.l_cls, r.l_cross), add(r.l_feat, r.l_out));

  r.report.l_cls = static_cast<double>(r.l_cls.item());
  r.report.l_cross = static_cast<double>(r.l_cross.item());
  r.report.l_feat = static_cast<double>(r.l_feat.item());
  r.report.l_out = static_cast<double>(r.l_out.item());
  r.report.total = r.report.l_cls + r.report.l_cross + r.report.l_feat + r.report.l_out;
  return r;
}

template <typename T>
DistillResult<T> distill_step(const SeaFormerModel<T>& teacher, const SeaFormerModel<T>& student,
                              const DistillHead<T>& head, const Tensor<T>& x_full,
                              const LabelMap& labels, const DistillConfig& cfg) {
  const std::size_t multiple = cfg.same_resolution ? 64 : 128;
  if (x_full.rank() != 3 || x_full.dim(1) % multiple != 0 || x_full.dim(2) % multiple != 0) {
    throw InputError("distillation input " + shape_to_string(x_full.shape()) +
                     " must be 3 x H x W with H, W divisible by " + std::to_string(multiple));
  }
  const auto teacher_feats = forward_stages(teacher, x_full);
  const Tensor<T> x_half = cfg.same_resolution ? x_full : avg_pool2d(x_full, 2, 2);
  const auto student_feats = forward_stages(student, x_half);
  return distill_from_features(teacher, student, head, teacher_feats, student_feats, labels, cfg);
}

VariantSpec toy_distill_spec(std::size_t channels) {
  VariantSpec spec;
  spec.name = "toy";
  spec.stages[0] = {LayerEntry::conv(3, channels, 2)};
  for (std::size_t s = 1; s < 6; ++s) spec.stages[s] = {LayerEntry::mb(3, 2, channels, 2)};
  spec.fusion_dims = {channels, channels};
  spec.validate();
  return spec;
}

#define SEAFORMER_INSTANTIATE_DISTILL(T)                                                          \
  template struct UpsampleModule<T>;                                                              \
  template struct DistillHead<T>;                                                                 \
  template UpsampleModule<T> make_upsample_module(UpsampleKind, std::size_t, std::size_t, Rng&); \
  template Tensor<T> upsample_module(const Tensor<T>&, const Tensor<T>&,                          \
                                     const UpsampleModule<T>&);                                   \
  template DistillHead<T> make_distill_head(const VariantSpec&, UpsampleKind, std::uint64_t);     \
  template DistillResult<T> distill_from_features(                                                \
      const SeaFormerModel<T>&, const SeaFormerModel<T>&, const DistillHead<T>&,                  \
      const std::array<Tensor<T>, 6>&, const std::array<Tensor<T>, 6>&, const LabelMap&,          \
      const DistillConfig&);                                                                      \
  template DistillResult<T> distill_step(const SeaFormerModel<T>&, const SeaFormerModel<T>&,      \
                                         const DistillHead<T>&, const Tensor<T>&,                 \
                                         const LabelMap&, const DistillConfig&);

SEAFORMER_INSTANTIATE_DISTILL(float)
SEAFORMER_INSTANTIATE_DISTILL(double)

}  // namespace seaformer
