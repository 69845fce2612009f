// SPDX-License-Identifier: Apache-2.0
#include "seaformer/attention.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "seaformer/errors.hpp"
#include "seaformer/instrument.hpp"
#include "seaformer/ops.hpp"

namespace seaformer {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N],
             std::string_view what) {
  std::string valid;
  for (const auto& [e, name] : table) {
    if (name == s) return e;
    if (!valid.empty()) valid += ", ";
    valid += name;
  }
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "' (valid: " +
                    valid + ")");
}

template <typename E, std::size_t N>
std::string_view enum_name(E e, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table) {
    if (v == e) return name;
  }
  return "unknown";
}

constexpr std::pair<SqueezeMode, std::string_view> kSqueezeNames[] = {
    {SqueezeMode::kMeanPool, "mean_pool"},
    {SqueezeMode::kMaxPool, "max_pool"},
    {SqueezeMode::kAdaptive, "adaptive"},
};
constexpr std::pair<EnhanceMode, std::string_view> kEnhanceModeNames[] = {
    {EnhanceMode::kMul, "mul"},
    {EnhanceMode::kAdd, "add"},
    {EnhanceMode::kOff, "off"},
};
constexpr std::pair<EnhanceInput, std::string_view> kEnhanceInputNames[] = {
    {EnhanceInput::kConcatQkv, "concat_qkv"},
    {EnhanceInput::kConvX, "conv_x"},
    {EnhanceInput::kUpconvX, "upconv_x"},
};

template <typename T>
void check_map(const Tensor<T>& x, std::string_view op) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected C x H x W, got " +
                         shape_to_string(x.shape()));
  }
}

}  // namespace

std::string_view to_string(SqueezeMode m) { return enum_name(m, kSqueezeNames); }
std::string_view to_string(EnhanceMode m) { return enum_name(m, kEnhanceModeNames); }
std::string_view to_string(EnhanceInput m) { return enum_name(m, kEnhanceInputNames); }

SqueezeMode parse_squeeze_mode(std::string_view s) {
  return parse_enum(s, kSqueezeNames, "squeeze_mode");
}
EnhanceMode parse_enhance_mode(std::string_view s) {
  return parse_enum(s, kEnhanceModeNames, "enhance_mode");
}
EnhanceInput parse_enhance_input(std::string_view s) {
  return parse_enum(s, kEnhanceInputNames, "enhance_input");
}

void AttentionConfig::validate() const {
  if (channels == 0 || key_dim == 0 || value_dim == 0 || heads == 0) {
    throw ConfigError("attention config: channels, key_dim, value_dim and heads must be >= 1");
  }
  if (key_dim % heads != 0 || value_dim % heads != 0) {
    throw ConfigError("attention config: key_dim " + std::to_string(key_dim) + " and value_dim " +
                      std::to_string(value_dim) + " must be divisible by heads " +
                      std::to_string(heads));
  }
  if (pos_embed_len < 2) throw ConfigError("attention config: pos_embed_len must be >= 2");
}

std::size_t AttentionConfig::enhance_source_channels() const {
  return enhance_input == EnhanceInput::kConvX ? channels : 2 * key_dim + value_dim;
}

AttentionConfig AttentionConfig::for_channels(std::size_t channels, std::size_t heads) {
  if (heads == 0) throw ConfigError("attention config: heads must be >= 1");
  const double per_head = static_cast<double>(channels) / static_cast<double>(heads);
  std::size_t kd = static_cast<std::size_t>(std::llround(per_head / 8.0)) * 8;
  if (kd < 8) kd = 8;
  AttentionConfig cfg;
  cfg.channels = channels;
  cfg.heads = heads;
  cfg.key_dim = kd * heads;
  cfg.value_dim = 2 * cfg.key_dim;
  return cfg;
}

bool operator==(const AttentionConfig& a, const AttentionConfig& b) {
  return a.channels == b.channels && a.key_dim == b.key_dim && a.value_dim == b.value_dim &&
         a.heads == b.heads && a.pos_embed_len == b.pos_embed_len &&
         a.squeeze_mode == b.squeeze_mode && a.enhance_mode == b.enhance_mode &&
         a.enhance_input == b.enhance_input;
}

void to_json(nlohmann::json& j, const AttentionConfig& cfg) {
  j = nlohmann::json{{"channels", cfg.channels},
                     {"key_dim", cfg.key_dim},
                     {"value_dim", cfg.value_dim},
                     {"heads", cfg.heads},
                     {"pos_embed_len", cfg.pos_embed_len},
                     {"squeeze_mode", to_string(cfg.squeeze_mode)},
                     {"enhance_mode", to_string(cfg.enhance_mode)},
                     {"enhance_input", to_string(cfg.enhance_input)}};
}

void from_json(const nlohmann::json& j, AttentionConfig& cfg) {
  static const char* kFields[] = {"channels",      "key_dim",      "value_dim",
                                  "heads",         "pos_embed_len", "squeeze_mode",
                                  "enhance_mode",  "enhance_input"};
  if (!j.is_object()) throw ConfigError("attention config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* f : kFields) known = known || key == f;
    if (!known) throw ConfigError("attention config: unknown field '" + key + "'");
  }
  for (const char* f : kFields) {
    if (!j.contains(f)) throw ConfigError(std::string("attention config: missing field '") + f + "'");
  }
  cfg.channels = j.at("channels").get<std::size_t>();
  cfg.key_dim = j.at("key_dim").get<std::size_t>();
  cfg.value_dim = j.at("value_dim").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.pos_embed_len = j.at("pos_embed_len").get<std::size_t>();
  cfg.squeeze_mode = parse_squeeze_mode(j.at("squeeze_mode").get<std::string>());
  cfg.enhance_mode = parse_enhance_mode(j.at("enhance_mode").get<std::string>());
  cfg.enhance_input = parse_enhance_input(j.at("enhance_input").get<std::string>());
  cfg.validate();
}

template <typename T>
void SeaAttentionParams<T>::visit(const AttentionConfig& cfg, const std::string& prefix,
                                  const ParamVisitor<T>& visitor) {
  to_q.visit(join_name(prefix, "to_q"), visitor);
  to_k.visit(join_name(prefix, "to_k"), visitor);
  to_v.visit(join_name(prefix, "to_v"), visitor);
  visitor(join_name(prefix, "pos_q_h"), ParamRole::kPosEmbed, pos_q_h);
  visitor(join_name(prefix, "pos_k_h"), ParamRole::kPosEmbed, pos_k_h);
  visitor(join_name(prefix, "pos_q_v"), ParamRole::kPosEmbed, pos_q_v);
  visitor(join_name(prefix, "pos_k_v"), ParamRole::kPosEmbed, pos_k_v);
  if (cfg.squeeze_mode == SqueezeMode::kAdaptive) {
    squeeze_mask_h.visit(join_name(prefix, "squeeze_mask_h"), visitor);
    squeeze_mask_v.visit(join_name(prefix, "squeeze_mask_v"), visitor);
    expand_mask_h.visit(join_name(prefix, "expand_mask_h"), visitor);
    expand_mask_v.visit(join_name(prefix, "expand_mask_v"), visitor);
  }
  proj.visit(join_name(prefix, "proj"), visitor);
  if (cfg.enhance_mode != EnhanceMode::kOff) {
    if (cfg.enhance_input != EnhanceInput::kConcatQkv) {
      enh_source.visit(join_name(prefix, "enh_source"), visitor);
    }
    enh_dw.visit(join_name(prefix, "enh_dw"), visitor);
    visitor(join_name(prefix, "enh_pw.weight"), ParamRole::kWeight, enh_pw.weight);
    visit_bn(join_name(prefix, "enh_bn"), enh_bn, visitor);
  }
}

template <typename T>
SeaAttentionParams<T> make_sea_params(const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  SeaAttentionParams<T> p;
  p.to_q = make_conv_bn<T>(c, cfg.key_dim, 1, 1, 1, rng);
  p.to_k = make_conv_bn<T>(c, cfg.key_dim, 1, 1, 1, rng);
  p.to_v = make_conv_bn<T>(c, cfg.value_dim, 1, 1, 1, rng);
  const Shape table{cfg.pos_embed_len, cfg.key_dim};
  p.pos_q_h = uniform_tensor<T>(table, -0.02, 0.02, rng);
  p.pos_k_h = uniform_tensor<T>(table, -0.02, 0.02, rng);
  p.pos_q_v = uniform_tensor<T>(table, -0.02, 0.02, rng);
  p.pos_k_v = uniform_tensor<T>(table, -0.02, 0.02, rng);
  if (cfg.squeeze_mode == SqueezeMode::kAdaptive) {
    p.squeeze_mask_h = make_conv_bn<T>(c, 1, 1, 1, 1, rng);
    p.squeeze_mask_v = make_conv_bn<T>(c, 1, 1, 1, 1, rng);
    p.expand_mask_h = make_conv_bn<T>(c, 1, 1, 1, 1, rng);
    p.expand_mask_v = make_conv_bn<T>(c, 1, 1, 1, 1, rng);
  }
  p.proj = make_conv_bn<T>(cfg.value_dim, c, 1, 1, 1, rng);
  if (cfg.enhance_mode != EnhanceMode::kOff) {
    const std::size_t src = cfg.enhance_source_channels();
    if (cfg.enhance_input != EnhanceInput::kConcatQkv) {
      p.enh_source = make_conv_bn<T>(c, src, 1, 1, 1, rng);
    }
    p.enh_dw = make_conv_bn<T>(src, src, 3, 1, src, rng);
    p.enh_pw = make_conv<T>(src, c, 1, 1, 1, rng);
    p.enh_bn = BatchNormParams<T>::identity(c);
  }
  return p;
}

template <typename T>
Tensor<T> interpolate_pos(const Tensor<T>& table, std::size_t n) {
  if (table.rank() != 2) {
    throw DimensionError("position table must be L x D, got " + shape_to_string(table.shape()));
  }
  const std::size_t l = table.dim(0), d = table.dim(1);
  Tensor<T> r = bilinear_resize(reshape(table, Shape{1, l, d}), n, d);
  return reshape(r, Shape{n, d});
}

template <typename T>
Tensor<T> squeeze_axis(const Tensor<T>& x, Axis axis, SqueezeMode mode,
                       const Tensor<T>* mask_logits) {
  check_map(x, "squeeze_axis");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t reduce = axis == Axis::kHorizontal ? 2 : 1;
  const std::size_t len = axis == Axis::kHorizontal ? h : w;
  Tensor<T> pooled;
  switch (mode) {
    case SqueezeMode::kMeanPool:
      pooled = mean_along(x, reduce);
      break;
    case SqueezeMode::kMaxPool:
      pooled = max_along(x, reduce);
      break;
    case SqueezeMode::kAdaptive: {
      if (mask_logits == nullptr) throw ConfigError("squeeze_axis: adaptive mode needs a mask");
      if (mask_logits->shape() != Shape{1, h, w}) {
        throw DimensionError("squeeze_axis: mask logits " +
                             shape_to_string(mask_logits->shape()) + " for input " +
                             shape_to_string(x.shape()));
      }
      pooled = sum_along(mul(x, softmax(*mask_logits, reduce)), reduce);
      break;
    }
  }
  return permute(reshape(pooled, Shape{c, len}), {1, 0});
}

template <typename T>
Tensor<T> expand_axis(const Tensor<T>& y, Axis axis, std::size_t h, std::size_t w,
                      const Tensor<T>* mask) {
  if (y.rank() != 2) {
    throw DimensionError("expand_axis: expected axis_len x C, got " + shape_to_string(y.shape()));
  }
  const std::size_t len = axis == Axis::kHorizontal ? h : w;
  if (y.dim(0) != len) {
    throw DimensionError("expand_axis: sequence length " + std::to_string(y.dim(0)) +
                         " does not match target " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t c = y.dim(1);
  const Shape col = axis == Axis::kHorizontal ? Shape{c, h, 1} : Shape{c, 1, w};
  Tensor<T> tokens = reshape(permute(y, {1, 0}), col);
  if (mask == nullptr) return broadcast_to(tokens, Shape{c, h, w});
  if (mask->shape() != Shape{1, h, w}) {
    throw DimensionError("expand_axis: mask " + shape_to_string(mask->shape()) + " for target " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  return mul(tokens, *mask);
}

template <typename T>
Tensor<T> axial_attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       std::size_t heads, const Tensor<T>* pos_q, const Tensor<T>* pos_k,
                       Tensor<T>* weights) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("axial_attend: q, k, v must be N x D");
  }
  const std::size_t n = q.dim(0);
  if (k.dim(0) != n || v.dim(0) != n) {
    throw DimensionError("axial_attend: sequence lengths differ: q " + shape_to_string(q.shape()) +
                         ", k " + shape_to_string(k.shape()) + ", v " +
                         shape_to_string(v.shape()));
  }
  if (k.dim(1) != q.dim(1)) {
    throw DimensionError("axial_attend: q and k widths differ: " + shape_to_string(q.shape()) +
                         " vs " + shape_to_string(k.shape()));
  }
  if (heads == 0 || q.dim(1) % heads != 0 || v.dim(1) % heads != 0) {
    throw DimensionError("axial_attend: widths " + std::to_string(q.dim(1)) + "/" +
                         std::to_string(v.dim(1)) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t d = q.dim(1) / heads, dv = v.dim(1) / heads;
  const Tensor<T> qp = pos_q != nullptr ? add(q, *pos_q) : q;
  const Tensor<T> kp = pos_k != nullptr ? add(k, *pos_k) : k;
  Tensor<T> qh = permute(reshape(qp, Shape{n, heads, d}), {1, 0, 2});
  Tensor<T> kt = permute(reshape(kp, Shape{n, heads, d}), {1, 2, 0});
  Tensor<T> vh = permute(reshape(v, Shape{n, heads, dv}), {1, 0, 2});
  Tensor<T> attn =
      softmax(scale(bmm(qh, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))), 2);
  if (weights != nullptr) *weights = attn.detached();
  Tensor<T> out = bmm(attn, vh);
  return reshape(permute(out, {1, 0, 2}), Shape{n, heads * dv});
}

template <typename T>
Tensor<T> detail_enhancement(const Tensor<T>& x, const Tensor<T>& q, const Tensor<T>& k,
                             const Tensor<T>& v, const AttentionConfig& cfg,
                             const SeaAttentionParams<T>& params) {
  check_map(x, "detail_enhancement");
  Tensor<T> src;
  switch (cfg.enhance_input) {
    case EnhanceInput::kConcatQkv:
      src = concat(std::vector<Tensor<T>>{q, k, v}, 0);
      break;
    case EnhanceInput::kConvX:
    case EnhanceInput::kUpconvX:
      src = params.enh_source.forward(x);
      break;
  }
  Tensor<T> h = params.enh_dw.forward(src);
  h = batchnorm_infer(relu6(conv2d(h, params.enh_pw)), params.enh_bn);
  return sigmoid(h);
}

template <typename T>
Tensor<T> sea_attention_forward(const Tensor<T>& x, const AttentionConfig& cfg,
                                const SeaAttentionParams<T>& params,
                                const SeaForwardOptions& options, SeaTrace<T>* trace) {
  check_map(x, "sea_attention");
  cfg.validate();
  if (x.dim(0) != cfg.channels) {
    throw ConfigError("sea_attention: input has " + std::to_string(x.dim(0)) +
                      " channels, config says " + std::to_string(cfg.channels));
  }
  const std::size_t h = x.dim(1), w = x.dim(2);
  Tensor<T> q, k, v;
  {
    MacLabel label("proj");
    q = params.to_q.forward(x);
    k = params.to_k.forward(x);
    v = params.to_v.forward(x);
  }
  if (q.dim(0) != cfg.key_dim || k.dim(0) != cfg.key_dim || v.dim(0) != cfg.value_dim) {
    throw ConfigError("sea_attention: projection widths do not match config");
  }

  const bool adaptive = cfg.squeeze_mode == SqueezeMode::kAdaptive;
  Tensor<T> sm_h, sm_v, em_h, em_v;
  if (adaptive) {
    sm_h = params.squeeze_mask_h.forward(x);
    sm_v = params.squeeze_mask_v.forward(x);
    em_h = params.expand_mask_h.forward(x);
    em_v = params.expand_mask_v.forward(x);
    if (trace != nullptr) {
      trace->squeeze_w_h = softmax(sm_h, 2).detached();
      trace->squeeze_w_v = softmax(sm_v, 1).detached();
    }
  }
  const Tensor<T>* mh = adaptive ? &sm_h : nullptr;
  const Tensor<T>* mv = adaptive ? &sm_v : nullptr;

  Tensor<T> rq_h, rk_h, rq_v, rk_v;
  if (options.use_pos_embed) {
    rq_h = interpolate_pos(params.pos_q_h, h);
    rk_h = interpolate_pos(params.pos_k_h, h);
    rq_v = interpolate_pos(params.pos_q_v, w);
    rk_v = interpolate_pos(params.pos_k_v, w);
  }
  const bool pe = options.use_pos_embed;

  Tensor<T> y_h = axial_attend(squeeze_axis(q, Axis::kHorizontal, cfg.squeeze_mode, mh),
                               squeeze_axis(k, Axis::kHorizontal, cfg.squeeze_mode, mh),
                               squeeze_axis(v, Axis::kHorizontal, cfg.squeeze_mode, mh),
                               cfg.heads, pe ? &rq_h : nullptr, pe ? &rk_h : nullptr,
                               trace != nullptr ? &trace->attn_h : nullptr);
  Tensor<T> y_v = axial_attend(squeeze_axis(q, Axis::kVertical, cfg.squeeze_mode, mv),
                               squeeze_axis(k, Axis::kVertical, cfg.squeeze_mode, mv),
                               squeeze_axis(v, Axis::kVertical, cfg.squeeze_mode, mv),
                               cfg.heads, pe ? &rq_v : nullptr, pe ? &rk_v : nullptr,
                               trace != nullptr ? &trace->attn_v : nullptr);
  Tensor<T> semantic = add(expand_axis(y_h, Axis::kHorizontal, h, w, adaptive ? &em_h : nullptr),
                           expand_axis(y_v, Axis::kVertical, h, w, adaptive ? &em_v : nullptr));
  if (trace != nullptr) trace->semantic = semantic.detached();

  Tensor<T> out;
  {
    MacLabel label("proj");
    out = params.proj.forward(semantic);
  }
  switch (cfg.enhance_mode) {
    case EnhanceMode::kOff:
      return out;
    case EnhanceMode::kMul:
      return mul(out, detail_enhancement(x, q, k, v, cfg, params));
    case EnhanceMode::kAdd:
      return add(out, detail_enhancement(x, q, k, v, cfg, params));
  }
  return out;
}

template <typename T>
void SeaformerLayerParams<T>::visit(const AttentionConfig& cfg, const std::string& prefix,
                                    const ParamVisitor<T>& visitor) {
  attn.visit(cfg, join_name(prefix, "attn"), visitor);
  ffn_expand.visit(join_name(prefix, "ffn_expand"), visitor);
  ffn_dw.visit(join_name(prefix, "ffn_dw"), visitor);
  ffn_project.visit(join_name(prefix, "ffn_project"), visitor);
}

template <typename T>
SeaformerLayerParams<T> make_layer_params(const AttentionConfig& cfg, std::size_t ffn_ratio,
                                          Rng& rng) {
  if (ffn_ratio == 0) throw ConfigError("seaformer layer: ffn ratio must be >= 1");
  SeaformerLayerParams<T> p;
  p.attn = make_sea_params<T>(cfg, rng);
  const std::size_t c = cfg.channels, hidden = c * ffn_ratio;
  p.ffn_expand = make_conv_bn<T>(c, hidden, 1, 1, 1, rng);
  p.ffn_dw = make_conv_bn<T>(hidden, hidden, 3, 1, hidden, rng);
  p.ffn_project = make_conv_bn<T>(hidden, c, 1, 1, 1, rng);
  return p;
}

template <typename T>
Tensor<T> seaformer_layer(const Tensor<T>& x, const AttentionConfig& cfg,
                          const SeaformerLayerParams<T>& params) {
  Tensor<T> y = add(x, sea_attention_forward(x, cfg, params.attn));
  Tensor<T> f = params.ffn_expand.forward(y);
  f = relu6(params.ffn_dw.forward(f));
  f = params.ffn_project.forward(f);
  return add(y, f);
}

#define SEAFORMER_INSTANTIATE_ATTN(T)                                                           \
  template struct SeaAttentionParams<T>;                                                        \
  template SeaAttentionParams<T> make_sea_params(const AttentionConfig&, Rng&);                 \
  template Tensor<T> interpolate_pos(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> squeeze_axis(const Tensor<T>&, Axis, SqueezeMode, const Tensor<T>*);       \
  template Tensor<T> expand_axis(const Tensor<T>&, Axis, std::size_t, std::size_t,              \
                                 const Tensor<T>*);                                             \
  template Tensor<T> axial_attend(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                  std::size_t, const Tensor<T>*, const Tensor<T>*, Tensor<T>*); \
  template Tensor<T> detail_enhancement(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                        const Tensor<T>&, const AttentionConfig&,               \
                                        const SeaAttentionParams<T>&);                          \
  template Tensor<T> sea_attention_forward(const Tensor<T>&, const AttentionConfig&,            \
                                           const SeaAttentionParams<T>&,                        \
                                           const SeaForwardOptions&, SeaTrace<T>*);             \
  template struct SeaformerLayerParams<T>;                                                      \
  template SeaformerLayerParams<T> make_layer_params(const AttentionConfig&, std::size_t, Rng&); \
  template Tensor<T> seaformer_layer(const Tensor<T>&, const AttentionConfig&,                  \
                                     const SeaformerLayerParams<T>&);

SEAFORMER_INSTANTIATE_ATTN(float)
SEAFORMER_INSTANTIATE_ATTN(double)

}  // namespace seaformer
