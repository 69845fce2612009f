// SPDX-License-Identifier: Apache-2.0
#include "seaformer/backbone.hpp"

#include <cmath>

#include "seaformer/errors.hpp"
#include "seaformer/instrument.hpp"
#include "seaformer/ops.hpp"

namespace seaformer {

std::string_view to_string(Task t) { return t == Task::kSeg ? "seg" : "cls"; }

Task parse_task(std::string_view s) {
  if (s == "seg") return Task::kSeg;
  if (s == "cls") return Task::kCls;
  throw ConfigError("unknown task '" + std::string(s) + "' (valid: seg, cls)");
}

std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kSigmoidMul:
      return "sigmoid_mul";
    case FusionMode::kAdd:
      return "add";
    case FusionMode::kMul:
      return "mul";
    case FusionMode::kSigmoidAdd:
      return "sigmoid_add";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "sigmoid_mul") return FusionMode::kSigmoidMul;
  if (s == "add") return FusionMode::kAdd;
  if (s == "mul") return FusionMode::kMul;
  if (s == "sigmoid_add") return FusionMode::kSigmoidAdd;
  throw ConfigError("unknown fusion mode '" + std::string(s) +
                    "' (valid: sigmoid_mul, add, mul, sigmoid_add)");
}

template <typename T>
void FusionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& visitor) {
  spatial.visit(join_name(prefix, "spatial"), visitor);
  context.visit(join_name(prefix, "context"), visitor);
}

template <typename T>
FusionParams<T> make_fusion_params(std::size_t c_spatial, std::size_t c_context, std::size_t m,
                                   Rng& rng) {
  FusionParams<T> p;
  p.spatial = make_conv_bn<T>(c_spatial, m, 1, 1, 1, rng);
  p.context = make_conv_bn<T>(c_context, m, 1, 1, 1, rng);
  return p;
}

template <typename T>
Tensor<T> fusion_block(const Tensor<T>& spatial, const Tensor<T>& context,
                       const FusionParams<T>& params, FusionMode mode) {
  if (spatial.rank() != 3 || context.rank() != 3) {
    throw DimensionError("fusion_block: inputs must be C x H x W");
  }
  const std::size_t h = spatial.dim(1), w = spatial.dim(2);
  if (context.dim(1) > h || context.dim(2) > w) {
    throw DimensionError("fusion_block: context " + shape_to_string(context.shape()) +
                         " is larger than spatial " + shape_to_string(spatial.shape()));
  }
  Tensor<T> s = params.spatial.forward(spatial);
  Tensor<T> c = params.context.forward(context);
  if (mode == FusionMode::kSigmoidMul || mode == FusionMode::kSigmoidAdd) c = sigmoid(c);
  c = bilinear_resize(c, h, w);
  if (mode == FusionMode::kSigmoidMul || mode == FusionMode::kMul) return mul(s, c);
  return add(s, c);
}

template <typename T>
void SeaFormerModel<T>::visit(const std::string& prefix, const ParamVisitor<T>& visitor) {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string sp = join_name(prefix, "stage" + std::to_string(s + 1));
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      StageLayer<T>& layer = stages[s][i];
      const std::string lp = join_name(sp, std::to_string(i));
      switch (layer.entry.kind) {
        case LayerEntry::Kind::kConv:
          layer.conv.visit(lp, visitor);
          break;
        case LayerEntry::Kind::kMB:
          layer.mb.visit(lp, visitor);
          break;
        case LayerEntry::Kind::kSea:
          for (std::size_t l = 0; l < layer.sea.size(); ++l) {
            layer.sea[l].visit(layer.attn, join_name(lp, std::to_string(l)), visitor);
          }
          break;
      }
    }
  }
  if (task == Task::kSeg) {
    fuse1.visit(join_name(prefix, "fusion1"), visitor);
    fuse2.visit(join_name(prefix, "fusion2"), visitor);
    head_hidden.visit(join_name(prefix, "head.hidden"), visitor);
    head_out.visit(join_name(prefix, "head.out"), visitor);
  } else {
    visitor(join_name(prefix, "classifier.weight"), ParamRole::kWeight, cls_weight);
    visitor(join_name(prefix, "classifier.bias"), ParamRole::kBias, cls_bias);
  }
}

template <typename T>
SeaFormerModel<T> build_model(const VariantSpec& spec, std::size_t num_classes, Task task,
                              std::uint64_t seed, const ModelOptions& options) {
  spec.validate();
  if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
  SeaFormerModel<T> m;
  m.spec = spec;
  m.options = options;
  m.task = task;
  m.num_classes = num_classes;
  Rng rng(seed);
  std::size_t c = 3;
  for (std::size_t s = 0; s < 6; ++s) {
    for (const LayerEntry& e : spec.stages[s]) {
      StageLayer<T> layer;
      layer.entry = e;
      switch (e.kind) {
        case LayerEntry::Kind::kConv:
          layer.conv = make_conv_bn<T>(c, e.out_channels, e.kernel, e.stride, 1, rng);
          c = e.out_channels;
          break;
        case LayerEntry::Kind::kMB:
          layer.mb = make_mobilenet_block<T>(
              c, MobileNetBlockSpec{e.kernel, e.expansion, e.out_channels, e.stride}, rng);
          c = e.out_channels;
          break;
        case LayerEntry::Kind::kSea: {
          AttentionConfig cfg = AttentionConfig::for_channels(c, e.heads);
          cfg.pos_embed_len = options.pos_embed_len;
          cfg.squeeze_mode = options.squeeze_mode;
          cfg.enhance_mode = options.enhance_mode;
          cfg.enhance_input = options.enhance_input;
          layer.attn = cfg;
          const std::size_t ratio = e.ffn_ratio != 0 ? e.ffn_ratio : default_ffn_ratio(s);
          for (std::size_t l = 0; l < e.layers; ++l) {
            layer.sea.push_back(make_layer_params<T>(cfg, ratio, rng));
          }
          break;
        }
      }
      m.stages[s].push_back(std::move(layer));
    }
  }
  if (task == Task::kSeg) {
    const auto [m1, m2] = spec.fusion_dims;
    m.fuse1 = make_fusion_params<T>(spec.stage_channels(2), spec.stage_channels(4), m1, rng);
    m.fuse2 = make_fusion_params<T>(m1, spec.stage_channels(5), m2, rng);
    m.head_hidden = make_conv_bn<T>(m2, m2, 1, 1, 1, rng);
    m.head_out = make_conv_bn<T>(m2, num_classes, 1, 1, 1, rng);
  } else {
    const std::size_t c6 = spec.stage_channels(5);
    const double bound = std::sqrt(6.0 / static_cast<double>(c6));
    m.cls_weight = uniform_tensor<T>(Shape{num_classes, c6}, -bound, bound, rng);
    m.cls_bias = Tensor<T>(Shape{num_classes});
  }
  return m;
}

template <typename T>
SeaFormerModel<T> build_variant(std::string_view name, std::size_t num_classes, Task task,
                                std::uint64_t seed, const ModelOptions& options) {
  return build_model<T>(variant_spec(name), num_classes, task, seed, options);
}

template <typename T>
Tensor<T> stage_forward(const SeaFormerModel<T>& model, std::size_t index, const Tensor<T>& x,
                        const ForwardOptions& fwd) {
  if (index >= 6) throw ArgumentError("stage index must be < 6");
  MacLabel label("stage" + std::to_string(index + 1));
  Tensor<T> h = x;
  for (const StageLayer<T>& layer : model.stages[index]) {
    switch (layer.entry.kind) {
      case LayerEntry::Kind::kConv:
        h = relu6(layer.conv.forward(h));
        break;
      case LayerEntry::Kind::kMB:
        h = mobilenet_block(h, layer.mb);
        break;
      case LayerEntry::Kind::kSea:
        if (fwd.skip_sea) break;
        for (const auto& p : layer.sea) h = seaformer_layer(h, layer.attn, p);
        break;
    }
  }
  return h;
}

namespace {

template <typename T>
void check_image(const Tensor<T>& x, std::size_t multiple) {
  if (x.rank() != 3 || x.dim(0) != 3) {
    throw InputError("expected a 3 x H x W image, got " + shape_to_string(x.shape()));
  }
  if (x.dim(1) % multiple != 0 || x.dim(2) % multiple != 0) {
    throw InputError("image size " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                     " must be divisible by " + std::to_string(multiple));
  }
}

}  // namespace

template <typename T>
std::array<Tensor<T>, 6> forward_stages(const SeaFormerModel<T>& model, const Tensor<T>& x,
                                        const ForwardOptions& fwd) {
  check_image(x, 64);
  std::array<Tensor<T>, 6> out;
  Tensor<T> h = x;
  for (std::size_t s = 0; s < 6; ++s) {
    h = stage_forward(model, s, h, fwd);
    out[s] = h;
  }
  return out;
}

template <typename T>
Tensor<T> stem_forward(const SeaFormerModel<T>& model, const Tensor<T>& x) {
  check_image(x, 8);
  Tensor<T> h = x;
  for (std::size_t s = 0; s < 3; ++s) h = stage_forward(model, s, h);
  return h;
}

template <typename T>
std::array<Tensor<T>, 3> context_branch_forward(const SeaFormerModel<T>& model,
                                                const Tensor<T>& x_s, const ForwardOptions& fwd) {
  std::array<Tensor<T>, 3> out;
  Tensor<T> h = x_s;
  for (std::size_t s = 3; s < 6; ++s) {
    h = stage_forward(model, s, h, fwd);
    out[s - 3] = h;
  }
  return out;
}

template <typename T>
Tensor<T> seg_head_forward(const SeaFormerModel<T>& model, const Tensor<T>& spatial,
                           const Tensor<T>& ctx5, const Tensor<T>& ctx6) {
  if (model.task != Task::kSeg) throw ConfigError("segmentation head requires a seg model");
  Tensor<T> f;
  {
    MacLabel label("fusion1");
    f = fusion_block(spatial, ctx5, model.fuse1, model.options.fusion);
  }
  {
    MacLabel label("fusion2");
    f = fusion_block(f, ctx6, model.fuse2, model.options.fusion);
  }
  MacLabel label("head");
  return model.head_out.forward(relu6(model.head_hidden.forward(f)));
}

template <typename T>
Tensor<T> seg_forward(const SeaFormerModel<T>& model, const Tensor<T>& x,
                      const ForwardOptions& fwd) {
  if (model.task != Task::kSeg) throw ConfigError("seg_forward requires a seg model");
  const auto st = forward_stages(model, x, fwd);
  return seg_head_forward(model, st[2], st[4], st[5]);
}

template <typename T>
Tensor<T> cls_forward(const SeaFormerModel<T>& model, const Tensor<T>& x,
                      const ForwardOptions& fwd) {
  if (model.task != Task::kCls) throw ConfigError("cls_forward requires a cls model");
  // Global pooling absorbs odd late-stage sizes, so 224 x 224 is accepted.
  check_image(x, 32);
  Tensor<T> h = x;
  for (std::size_t s = 0; s < 6; ++s) h = stage_forward(model, s, h, fwd);
  MacLabel label("classifier");
  const Tensor<T> pooled = global_avg_pool(h);
  const std::size_t c6 = pooled.dim(0);
  Tensor<T> logits = matmul(model.cls_weight, reshape(pooled, Shape{c6, 1}));
  return add(reshape(logits, Shape{model.num_classes}), model.cls_bias);
}

template <typename T>
std::map<std::string, std::uint64_t> param_breakdown(SeaFormerModel<T>& model) {
  std::map<std::string, std::uint64_t> out;
  std::uint64_t total = 0;
  model.visit("", [&](const std::string& name, ParamRole role, Tensor<T>& t) {
    if (!is_trainable(role)) return;
    out[name.substr(0, name.find('.'))] += t.numel();
    total += t.numel();
  });
  out["total"] = total;
  return out;
}

template <typename T>
std::map<std::string, std::uint64_t> mac_breakdown(const SeaFormerModel<T>& model, std::size_t h,
                                                   std::size_t w) {
  MacRecorder rec;
  {
    ShapeOnlyScope dry;
    const Tensor<T> x(Shape{3, h, w});
    if (model.task == Task::kSeg) {
      seg_forward(model, x);
    } else {
      cls_forward(model, x);
    }
  }
  std::map<std::string, std::uint64_t> out;
  for (const auto& [path, macs] : rec.tally().by_label) {
    out[path.substr(0, path.find('/'))] += macs;
  }
  out["total"] = rec.total();
  return out;
}

#define SEAFORMER_INSTANTIATE_BACKBONE(T)                                                       \
  template struct FusionParams<T>;                                                              \
  template FusionParams<T> make_fusion_params(std::size_t, std::size_t, std::size_t, Rng&);     \
  template Tensor<T> fusion_block(const Tensor<T>&, const Tensor<T>&, const FusionParams<T>&,   \
                                  FusionMode);                                                  \
  template struct SeaFormerModel<T>;                                                            \
  template SeaFormerModel<T> build_model(const VariantSpec&, std::size_t, Task, std::uint64_t,  \
                                         const ModelOptions&);                                  \
  template SeaFormerModel<T> build_variant(std::string_view, std::size_t, Task, std::uint64_t,  \
                                           const ModelOptions&);                                \
  template Tensor<T> stage_forward(const SeaFormerModel<T>&, std::size_t, const Tensor<T>&,     \
                                   const ForwardOptions&);                                      \
  template std::array<Tensor<T>, 6> forward_stages(const SeaFormerModel<T>&, const Tensor<T>&,  \
                                                   const ForwardOptions&);                      \
  template Tensor<T> stem_forward(const SeaFormerModel<T>&, const Tensor<T>&);                  \
  template std::array<Tensor<T>, 3> context_branch_forward(                                     \
      const SeaFormerModel<T>&, const Tensor<T>&, const ForwardOptions&);                       \
  template Tensor<T> seg_head_forward(const SeaFormerModel<T>&, const Tensor<T>&,               \
                                      const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> seg_forward(const SeaFormerModel<T>&, const Tensor<T>&,                    \
                                 const ForwardOptions&);                                        \
  template Tensor<T> cls_forward(const SeaFormerModel<T>&, const Tensor<T>&,                    \
                                 const ForwardOptions&);                                        \
  template std::map<std::string, std::uint64_t> param_breakdown(SeaFormerModel<T>&);           \
  template std::map<std::string, std::uint64_t> mac_breakdown(const SeaFormerModel<T>&,         \
                                                              std::size_t, std::size_t);

SEAFORMER_INSTANTIATE_BACKBONE(float)
SEAFORMER_INSTANTIATE_BACKBONE(double)

}  // namespace seaformer
