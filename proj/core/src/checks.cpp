// SPDX-License-Identifier: Apache-2.0
#include "seaformer/checks.hpp"

#include <algorithm>
#include <functional>

#include "seaformer/attention.hpp"
#include "seaformer/backbone.hpp"
#include "seaformer/baselines.hpp"
#include "seaformer/distill.hpp"
#include "seaformer/errors.hpp"
#include "seaformer/losses.hpp"
#include "seaformer/nn.hpp"
#include "seaformer/ops.hpp"

namespace seaformer {

std::string_view to_string(GradScope s) {
  switch (s) {
    case GradScope::kOps:
      return "ops";
    case GradScope::kSea:
      return "sea";
    case GradScope::kLayer:
      return "layer";
    case GradScope::kDistill:
      return "distill";
  }
  return "?";
}

GradScope parse_grad_scope(std::string_view s) {
  if (s == "ops") return GradScope::kOps;
  if (s == "sea") return GradScope::kSea;
  if (s == "layer") return GradScope::kLayer;
  if (s == "distill") return GradScope::kDistill;
  throw ArgumentError("unknown gradcheck scope '" + std::string(s) +
                      "' (valid: ops, sea, layer, distill)");
}

double default_threshold(GradScope s) { return s == GradScope::kDistill ? 1e-4 : 1e-5; }

namespace {

using TD = Tensor<double>;
using TV = std::vector<TD>;

TD rnd(Rng& rng, const Shape& s, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor<double>(s, lo, hi, rng);
}

template <typename Module, typename... Args>
void randomize(Module& m, std::uint64_t seed, Args... args) {
  randomize_params([&](const ParamVisitor<double>& v) { m.visit(args..., v); }, seed, true);
}

class OpSuite {
 public:
  OpSuite(std::uint64_t seed, double threshold) : rng_(seed) {
    report_.label = "ops";
    report_.threshold = threshold;
    opts_.threshold = threshold;
    opts_.seed = seed;
  }

  void check(const std::string& op, TV xs, const std::function<TD(const TV&)>& f) {
    std::vector<GradInput> in;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      in.push_back({op + ".x" + std::to_string(i), &xs[i]});
    }
    ++opts_.seed;
    report_.merge(gradcheck(op, in, [&] { return f(xs); }, opts_));
  }

  TD r(const Shape& s, double lo = -1.0, double hi = 1.0) { return rnd(rng_, s, lo, hi); }
  Rng& rng() { return rng_; }
  GradCheckReport& report() { return report_; }

 private:
  Rng rng_;
  GradCheckOptions opts_;
  GradCheckReport report_;
};

GradCheckReport ops_suite(std::uint64_t seed, double threshold) {
  OpSuite s(seed, threshold);
  s.check("matmul", {s.r({3, 4}), s.r({4, 5})}, [](const TV& x) { return matmul(x[0], x[1]); });
  s.check("bmm", {s.r({2, 3, 4}), s.r({2, 4, 2})}, [](const TV& x) { return bmm(x[0], x[1]); });
  s.check("add", {s.r({2, 3, 4}), s.r({3, 1})}, [](const TV& x) { return add(x[0], x[1]); });
  s.check("sub", {s.r({2, 3}), s.r({1, 3})}, [](const TV& x) { return sub(x[0], x[1]); });
  s.check("mul", {s.r({2, 3, 4}), s.r({2, 1, 4})}, [](const TV& x) { return mul(x[0], x[1]); });
  s.check("scale", {s.r({5})}, [](const TV& x) { return scale(x[0], 0.7); });
  s.check("sigmoid", {s.r({2, 3}, -3, 3)}, [](const TV& x) { return sigmoid(x[0]); });
  s.check("relu6", {s.r({4, 5}, -2, 8)}, [](const TV& x) { return relu6(x[0]); });
  s.check("exp", {s.r({2, 3})}, [](const TV& x) { return exp(x[0]); });
  s.check("softmax", {s.r({3, 4}, -2, 2)}, [](const TV& x) { return softmax(x[0], 1); });
  s.check("log_softmax", {s.r({3, 4}, -2, 2)}, [](const TV& x) { return log_softmax(x[0], 0); });
  s.check("sum", {s.r({3, 4})}, [](const TV& x) { return sum(x[0]); });
  s.check("sum_along", {s.r({2, 3, 4})}, [](const TV& x) { return sum_along(x[0], 1); });
  s.check("mean_along", {s.r({2, 3, 4})}, [](const TV& x) { return mean_along(x[0], 0); });
  s.check("max_along", {s.r({2, 3, 4})}, [](const TV& x) { return max_along(x[0], 2); });
  s.check("reshape", {s.r({2, 6})}, [](const TV& x) { return reshape(x[0], Shape{3, 4}); });
  s.check("permute", {s.r({2, 3, 4})}, [](const TV& x) { return permute(x[0], {2, 0, 1}); });
  s.check("concat", {s.r({2, 3}), s.r({2, 2})}, [](const TV& x) { return concat(x, 1); });
  s.check("slice", {s.r({3, 5})}, [](const TV& x) { return slice(x[0], 1, 1, 3); });
  s.check("broadcast_to", {s.r({1, 3})}, [](const TV& x) { return broadcast_to(x[0], {4, 3}); });
  s.check("sum_to", {s.r({4, 3})}, [](const TV& x) { return sum_to(x[0], {1, 3}); });
  s.check("conv2d", {s.r({3, 5, 5}), s.r({4, 3, 3, 3}), s.r({4})},
          [](const TV& x) { return conv2d(x[0], x[1], x[2], 1, 1, 1); });
  s.check("conv2d_stride2", {s.r({2, 6, 6}), s.r({3, 2, 3, 3})},
          [](const TV& x) { return conv2d(x[0], x[1], TD{}, 2, 1, 1); });
  s.check("conv2d_depthwise", {s.r({3, 5, 4}), s.r({3, 1, 5, 5})},
          [](const TV& x) { return conv2d(x[0], x[1], TD{}, 1, 2, 3); });
  s.check("conv2d_pointwise", {s.r({3, 4, 4}), s.r({5, 3, 1, 1})},
          [](const TV& x) { return conv2d(x[0], x[1], TD{}, 1, 0, 1); });
  {
    BatchNormParams<double> bn = BatchNormParams<double>::identity(3);
    bn.running_mean = s.r({3}, -0.5, 0.5);
    bn.running_var = s.r({3}, 0.5, 1.5);
    s.check("batchnorm", {s.r({3, 4, 4}), s.r({3}, 0.5, 1.5), s.r({3})}, [bn](const TV& x) {
      BatchNormParams<double> p = bn;
      p.gamma = x[1];
      p.beta = x[2];
      return batchnorm_infer(x[0], p);
    });
  }
  s.check("bilinear_up", {s.r({2, 3, 4})}, [](const TV& x) { return bilinear_resize(x[0], 5, 7); });
  s.check("bilinear_down", {s.r({2, 5, 6})},
          [](const TV& x) { return bilinear_resize(x[0], 2, 3); });
  s.check("avg_pool2d", {s.r({2, 4, 4})}, [](const TV& x) { return avg_pool2d(x[0], 2, 2); });
  s.check("global_avg_pool", {s.r({3, 4, 4})}, [](const TV& x) { return global_avg_pool(x[0]); });
  s.check("dense_attention", {s.r({2, 3, 4}), s.r({2, 5, 4}), s.r({2, 5, 3})},
          [](const TV& x) { return dense_attention(x[0], x[1], x[2], 0.5); });
  s.check("interpolate_pos", {s.r({6, 4})}, [](const TV& x) { return interpolate_pos(x[0], 4); });
  s.check("squeeze_adaptive_h", {s.r({3, 4, 5}), s.r({1, 4, 5})}, [](const TV& x) {
    return squeeze_axis(x[0], Axis::kHorizontal, SqueezeMode::kAdaptive, &x[1]);
  });
  s.check("squeeze_adaptive_v", {s.r({3, 4, 5}), s.r({1, 4, 5})}, [](const TV& x) {
    return squeeze_axis(x[0], Axis::kVertical, SqueezeMode::kAdaptive, &x[1]);
  });
  s.check("squeeze_max", {s.r({3, 4, 5})}, [](const TV& x) {
    return squeeze_axis(x[0], Axis::kVertical, SqueezeMode::kMaxPool);
  });
  s.check("expand_masked", {s.r({4, 3}), s.r({1, 4, 5})}, [](const TV& x) {
    return expand_axis(x[0], Axis::kHorizontal, 4, 5, &x[1]);
  });
  s.check("feature_similarity", {s.r({4, 2, 3}), s.r({4, 2, 3})},
          [](const TV& x) { return feature_similarity_loss(x[0], x[1]); });
  s.check("output_similarity", {s.r({3, 2, 2}, -2, 2), s.r({3, 2, 2}, -2, 2)},
          [](const TV& x) { return output_similarity_loss(x[0], x[1]); });
  {
    LabelMap labels{2, 3, {}};
    for (std::size_t i = 0; i < 6; ++i) {
      labels.values.push_back(i == 4 ? kIgnoreLabel : static_cast<std::int32_t>(s.rng().below(3)));
    }
    s.check("cross_entropy", {s.r({3, 2, 3}, -2, 2)},
            [labels](const TV& x) { return cross_entropy_loss(x[0], labels).loss; });
  }
  return std::move(s.report());
}

AttentionConfig small_attention_config(std::uint64_t seed) {
  AttentionConfig cfg = AttentionConfig::for_channels(8, 2);
  cfg.pos_embed_len = 6;
  cfg.squeeze_mode = SqueezeMode::kAdaptive;
  static constexpr EnhanceInput kInputs[3] = {EnhanceInput::kConcatQkv, EnhanceInput::kConvX,
                                              EnhanceInput::kUpconvX};
  cfg.enhance_input = kInputs[seed % 3];
  return cfg;
}

GradCheckReport sea_suite(std::uint64_t seed, double threshold) {
  const AttentionConfig cfg = small_attention_config(seed);
  Rng rng(seed);
  auto p = make_sea_params<double>(cfg, rng);
  randomize(p, seed + 1, cfg, std::string("attn"));
  TD x = rnd(rng, {cfg.channels, 4, 5});
  std::vector<GradInput> in{{"x", &x}};
  for (const auto& g : grad_inputs_of(p, cfg, std::string("attn"))) in.push_back(g);
  GradCheckOptions opts;
  opts.threshold = threshold;
  opts.seed = seed;
  return gradcheck("sea", in, [&] { return sea_attention_forward(x, cfg, p); }, opts);
}

GradCheckReport layer_suite(std::uint64_t seed, double threshold) {
  const AttentionConfig cfg = small_attention_config(seed);
  Rng rng(seed);
  auto p = make_layer_params<double>(cfg, 2, rng);
  randomize(p, seed + 1, cfg, std::string("layer"));
  TD x = rnd(rng, {cfg.channels, 4, 4});
  std::vector<GradInput> in{{"x", &x}};
  for (const auto& g : grad_inputs_of(p, cfg, std::string("layer"))) in.push_back(g);
  GradCheckOptions opts;
  opts.threshold = threshold;
  opts.seed = seed;
  return gradcheck("layer", in, [&] { return seaformer_layer(x, cfg, p); }, opts);
}

GradCheckReport distill_suite(std::uint64_t seed, double threshold) {
  constexpr std::size_t kChannels = 4, kClasses = 3;
  const VariantSpec spec = toy_distill_spec(kChannels);
  auto teacher = build_model<double>(spec, kClasses, Task::kSeg, seed);
  auto student = build_model<double>(spec, kClasses, Task::kSeg, seed + 1);
  auto head = make_distill_head<double>(spec, UpsampleKind::kMobileNet, seed + 2);
  randomize(teacher, seed + 3, std::string());
  randomize(student, seed + 4, std::string());
  randomize(head, seed + 5, std::string());

  // Student stage 3 at 8 x 8, teacher one octave finer.
  Rng rng(seed + 6);
  std::array<TD, 6> tf, sf;
  for (std::size_t s = 0; s < 6; ++s) {
    const std::size_t student_hw = 64 >> (s + 1);
    tf[s] = rnd(rng, {kChannels, 2 * student_hw, 2 * student_hw});
    sf[s] = rnd(rng, {kChannels, student_hw, student_hw});
  }
  LabelMap labels{16, 16, {}};
  for (std::size_t i = 0; i < 256; ++i) {
    labels.values.push_back(rng.below(10) == 0 ? kIgnoreLabel
                                               : static_cast<std::int32_t>(rng.below(kClasses)));
  }

  std::vector<GradInput> in;
  for (std::size_t s = 1; s < 6; ++s) in.push_back({"student.f" + std::to_string(s + 1), &sf[s]});
  // Only the student head and the upsample modules are reachable from
  // precomputed features.
  for (const auto& g : grad_inputs_of(student, std::string("student"))) {
    if (g.name.rfind("student.stage", 0) != 0) in.push_back(g);
  }
  for (const auto& g : grad_inputs_of(head, std::string("distill"))) in.push_back(g);

  const DistillConfig cfg;
  GradCheckOptions opts;
  opts.threshold = threshold;
  opts.seed = seed;
  return gradcheck("distill", in,
                   [&] {
                     return distill_from_features(teacher, student, head, tf, sf, labels, cfg)
                         .total;
                   },
                   opts);
}

}  // namespace

GradCheckReport run_gradcheck(GradScope scope, std::uint64_t seed, double threshold) {
  switch (scope) {
    case GradScope::kOps:
      return ops_suite(seed, threshold);
    case GradScope::kSea:
      return sea_suite(seed, threshold);
    case GradScope::kLayer:
      return layer_suite(seed, threshold);
    case GradScope::kDistill:
      return distill_suite(seed, threshold);
  }
  return {};
}

std::vector<OracleResult> run_oracle_checks(std::uint64_t seed) {
  std::vector<OracleResult> out;
  auto record = [&](std::string name, double value, double tol, bool pass) {
    out.push_back({std::move(name), value, tol, pass});
  };
  Rng rng(seed);

  {
    AttentionConfig mean_cfg = AttentionConfig::for_channels(16, 2);
    AttentionConfig adaptive_cfg = mean_cfg;
    adaptive_cfg.squeeze_mode = SqueezeMode::kAdaptive;
    auto p = make_sea_params<double>(adaptive_cfg, rng);
    randomize(p, seed + 1, adaptive_cfg, std::string());
    // Zero mask logits give uniform squeeze weights; unit expand masks.
    for (ConvBN<double>* m : {&p.squeeze_mask_h, &p.squeeze_mask_v}) {
      m->conv.weight = TD(m->conv.weight.shape());
      m->bn = BatchNormParams<double>::identity(1);
    }
    for (ConvBN<double>* m : {&p.expand_mask_h, &p.expand_mask_v}) {
      m->conv.weight = TD(m->conv.weight.shape());
      m->bn = BatchNormParams<double>::identity(1);
      m->bn.beta = TD(Shape{1}, 1.0);
    }
    const TD x = rnd(rng, {16, 8, 6});
    const double d = max_abs_diff(sea_attention_forward(x, adaptive_cfg, p),
                                  sea_attention_forward(x, mean_cfg, p));
    record("adaptive_uniform_vs_mean_pool", d, 1e-9, d <= 1e-9);
  }
  {
    const AttentionConfig cfg = AttentionConfig::for_channels(16, 2);
    auto p = make_baseline_params<double>(cfg, rng);
    randomize(p, seed + 2, std::string());
    const TD x = rnd(rng, {16, 8, 8});
    const double d = max_abs_diff(baseline_attention(x, BaselineKind::kWindow, 8, cfg, p),
                                  baseline_attention(x, BaselineKind::kGlobal, 8, cfg, p));
    record("single_window_vs_global", d, 1e-10, d <= 1e-10);
  }
  {
    const AttentionConfig cfg = AttentionConfig::for_channels(16, 2);
    auto p = make_sea_params<double>(cfg, rng);
    randomize(p, seed + 3, cfg, std::string());
    for (TD* t : {&p.pos_q_h, &p.pos_k_h, &p.pos_q_v, &p.pos_k_v}) *t = TD(t->shape());
    const TD x = rnd(rng, {16, 6, 7});
    const TD with = sea_attention_forward(x, cfg, p, SeaForwardOptions{true});
    const TD without = sea_attention_forward(x, cfg, p, SeaForwardOptions{false});
    record("zero_pos_tables_vs_none", max_abs_diff(with, without), 0.0,
           bitwise_equal(with, without));
  }
  {
    const AttentionConfig cfg = AttentionConfig::for_channels(16, 2);
    auto p = make_sea_params<double>(cfg, rng);
    randomize(p, seed + 4, cfg, std::string());
    const TD x = rnd(rng, {16, 1, 1});
    SeaTrace<double> trace;
    sea_attention_forward(x, cfg, p, {}, &trace);
    const TD v = p.to_v.forward(x);
    const double d = max_abs_diff(trace.semantic, scale(v, 2.0));
    record("single_position_semantic_is_2v", d, 1e-12, d <= 1e-12);
  }
  return out;
}

const std::vector<std::string>& attention_kinds() {
  static const std::vector<std::string> kinds = {"sea", "global", "window", "axial"};
  return kinds;
}

CostRow attention_cost_row(std::string_view kind, std::size_t hw, std::size_t channels,
                           std::uint64_t seed, bool timed) {
  constexpr std::size_t kWindow = 4;
  const AttentionConfig cfg = AttentionConfig::for_channels(channels, std::max<std::size_t>(1, channels / 16));
  Rng rng(seed);
  std::function<void(const Tensor<float>&)> run;
  if (kind == "sea") {
    auto p = make_sea_params<float>(cfg, rng);
    run = [cfg, p](const Tensor<float>& x) { sea_attention_forward(x, cfg, p); };
  } else {
    const BaselineKind b = parse_baseline_kind(kind);
    auto p = make_baseline_params<float>(cfg, rng);
    run = [cfg, p, b](const Tensor<float>& x) { baseline_attention(x, b, kWindow, cfg, p); };
  }
  CostRow row;
  row.label = std::string(kind);
  row.h = row.w = hw;
  row.c = channels;
  {
    const Tensor<float> x(Shape{channels, hw, hw});
    MacRecorder rec;
    ShapeOnlyScope dry;
    run(x);
    row.macs = rec.tally().excluding("proj");
  }
  if (timed) {
    const Tensor<float> x = uniform_tensor<float>({channels, hw, hw}, -1.0, 1.0, rng);
    row.wall_ns = time_kernel([&] { run(x); }, 1, 3).min_ns;
  }
  return row;
}

CostReport attention_scaling(std::string_view kind, const std::vector<std::size_t>& sizes,
                             std::size_t channels, std::uint64_t seed, bool timed) {
  CostReport report;
  for (std::size_t hw : sizes) {
    report.rows.push_back(attention_cost_row(kind, hw, channels, seed, timed));
  }
  return report;
}

}  // namespace seaformer
