#include <cmath>
#include <set>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "seaformer/checks.hpp"
#include "seaformer/distill.hpp"
#include "seaformer/errors.hpp"
#include "seaformer/losses.hpp"
#include "seaformer/ops.hpp"
#include "test_support.hpp"

namespace seaformer {
namespace {

using testing::random_tensor;
using testing::zero_fill;

void zero_gate(UpsampleModule<double>& m) {
  zero_fill(m.gate.conv.weight);
  zero_fill(m.gate.bn.beta);
  zero_fill(m.gate.bn.running_mean);
}

// Keep only the centre tap of every depth-wise kernel so constant maps stay
// constant up to the border.
void center_tap_only(ConvBN<double>& dw) {
  Tensor<double>& w = dw.conv.weight;
  const std::size_t k = w.dim(2);
  for (std::size_t c = 0; c < w.dim(0); ++c) {
    for (std::size_t i = 0; i < k * k; ++i) {
      if (i != (k / 2) * k + k / 2) w[c * k * k + i] = 0;
    }
  }
}

LabelMap random_labels(std::size_t h, std::size_t w, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  LabelMap m{h, w, {}};
  for (std::size_t i = 0; i < h * w; ++i) {
    m.values.push_back(rng.below(10) == 0 ? kIgnoreLabel
                                          : static_cast<std::int32_t>(rng.below(classes)));
  }
  return m;
}

TEST(Upsample, ShapeContract) {
  Rng rng(1);
  const auto m = make_upsample_module<double>(UpsampleKind::kMobileNet, 8, 8, rng);
  const auto out = upsample_module(random_tensor({8, 4, 4}, 2), random_tensor({8, 8, 8}, 3), m);
  EXPECT_EQ(out.shape(), (Shape{8, 8, 8}));
}

TEST(Upsample, MobileNetUsesExpansionFourKernelFive) {
  Rng rng(1);
  const auto m = make_upsample_module<double>(UpsampleKind::kMobileNet, 8, 6, rng);
  EXPECT_EQ(m.main.spec.expansion, 4.0);
  EXPECT_EQ(m.main.spec.kernel, 5u);
  EXPECT_EQ(m.refine.spec.kernel, 5u);
  EXPECT_EQ(m.gate.conv.weight.shape(), (Shape{8, 6, 1, 1}));
}

TEST(Upsample, ZeroGateLogitsHalveMainPath) {
  Rng rng(4);
  auto m = make_upsample_module<double>(UpsampleKind::kMobileNet, 6, 5, rng);
  zero_gate(m);
  const auto low = random_tensor({6, 3, 4}, 5);
  const auto gate = random_tensor({5, 6, 8}, 6);
  const auto out = upsample_module(low, gate, m);
  const auto main = bilinear_resize(mobilenet_block(low, m.main), 6, 8);
  const auto expected = mobilenet_block(scale(main, 0.5), m.refine);
  ASSERT_EQ(out.shape(), expected.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], expected[i]);
}

TEST(Upsample, ConstantLowStaysConstant) {
  Rng rng(7);
  auto m = make_upsample_module<double>(UpsampleKind::kMobileNet, 4, 4, rng);
  center_tap_only(m.main.depthwise);
  center_tap_only(m.refine.depthwise);
  zero_gate(m);
  const Tensor<double> low({4, 4, 4}, 0.8);
  const auto main = bilinear_resize(mobilenet_block(low, m.main), 8, 8);
  const auto out = upsample_module(low, random_tensor({4, 8, 8}, 8), m);
  for (const auto* t : {&main, &out}) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double ref = t->at({c, 0, 0});
      for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR((*t)[c * 64 + i], ref, 1e-12);
    }
  }
}

TEST(Upsample, MismatchRaisesConfigError) {
  Rng rng(9);
  const auto m = make_upsample_module<double>(UpsampleKind::kMobileNet, 8, 8, rng);
  EXPECT_THROW(upsample_module(random_tensor({8, 4, 4}, 1), random_tensor({8, 6, 8}, 2), m),
               ConfigError);
  EXPECT_THROW(upsample_module(random_tensor({6, 4, 4}, 1), random_tensor({8, 8, 8}, 2), m),
               ConfigError);
}

TEST(Upsample, KindsParseAndDiffer) {
  for (UpsampleKind k : {UpsampleKind::kBilinear, UpsampleKind::kMobileNet, UpsampleKind::kConv}) {
    EXPECT_EQ(parse_upsample_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_upsample_kind("pixelshuffle"), ConfigError);
  const auto low = random_tensor({4, 2, 2}, 1);
  const auto gate = random_tensor({4, 4, 4}, 2);
  std::vector<Tensor<double>> outs;
  for (UpsampleKind k : {UpsampleKind::kBilinear, UpsampleKind::kMobileNet, UpsampleKind::kConv}) {
    Rng rng(3);
    outs.push_back(upsample_module(low, gate, make_upsample_module<double>(k, 4, 4, rng)));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) {
      double d = 0;
      for (std::size_t e = 0; e < outs[i].numel(); ++e) {
        d = std::max(d, std::abs(outs[i][e] - outs[j][e]));
      }
      EXPECT_GT(d, 1e-6) << i << " vs " << j;
    }
  }
}

TEST(UpsampleProperty, EvenGateSizesDoubleExactly) {
  Rng rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6), c = 1 + rng.below(6);
    const auto kind = static_cast<UpsampleKind>(rng.below(3));
    const auto m = make_upsample_module<double>(kind, c, c + 1, rng);
    const auto out = upsample_module(random_tensor({c, h, w}, trial),
                                     random_tensor({c + 1, 2 * h, 2 * w}, 100 + trial), m);
    EXPECT_EQ(out.shape(), (Shape{c, 2 * h, 2 * w})) << to_string(kind);
  }
}

TEST(FeatureLoss, IdenticalIsMinusOne) {
  const auto f = random_tensor({5, 3, 3}, 1);
  EXPECT_EQ(feature_similarity_loss(f, f).item(), -1.0);
}

TEST(FeatureLoss, AntiparallelIsPlusOne) {
  const auto f = random_tensor({5, 3, 3}, 2);
  EXPECT_NEAR(feature_similarity_loss(scale(f, -1.0), f).item(), 1.0, 1e-15);
}

TEST(FeatureLoss, MatchesPerPositionOracle) {
  const auto s = random_tensor({4, 2, 2}, 3);
  const auto t = random_tensor({4, 2, 2}, 4);
  double acc = 0;
  for (std::size_t p = 0; p < 4; ++p) {
    double dot = 0, ns = 0, nt = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      dot += s[c * 4 + p] * t[c * 4 + p];
      ns += s[c * 4 + p] * s[c * 4 + p];
      nt += t[c * 4 + p] * t[c * 4 + p];
    }
    acc += -dot / (std::sqrt(ns) * std::sqrt(nt));
  }
  EXPECT_NEAR(feature_similarity_loss(s, t).item(), acc / 4, 1e-12);
}

TEST(FeatureLoss, ZeroNormPositionContributesZero) {
  auto s = random_tensor({3, 1, 2}, 5);
  s[0] = s[2] = s[4] = 0;  // position 0
  const auto t = random_tensor({3, 1, 2}, 6);
  double dot = 0, ns = 0, nt = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    dot += s[c * 2 + 1] * t[c * 2 + 1];
    ns += s[c * 2 + 1] * s[c * 2 + 1];
    nt += t[c * 2 + 1] * t[c * 2 + 1];
  }
  const double l = feature_similarity_loss(s, t).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, -dot / std::sqrt(ns * nt) / 2, 1e-12);
}

TEST(FeatureLoss, ShapeMismatchRaises) {
  EXPECT_THROW(feature_similarity_loss(random_tensor({3, 2, 2}, 1), random_tensor({3, 2, 3}, 1)),
               DimensionError);
}

TEST(OutputLoss, IdenticalIsZero) {
  const auto z = random_tensor({6, 3, 3}, 1, -5, 5);
  EXPECT_EQ(output_similarity_loss(z, z).item(), 0.0);
}

TEST(OutputLoss, TwoClassHandValue) {
  Tensor<double> teacher({2, 1, 1});
  teacher[0] = std::log(2.0);
  const Tensor<double> student({2, 1, 1});
  const double expected = (2.0 / 3) * std::log(4.0 / 3) + (1.0 / 3) * std::log(2.0 / 3);
  EXPECT_NEAR(output_similarity_loss(student, teacher).item(), expected, 1e-14);
  EXPECT_NEAR(expected, 0.0566, 1e-4);
}

TEST(OutputLoss, ShapeMismatchRaises) {
  EXPECT_THROW(output_similarity_loss(random_tensor({3, 2, 2}, 1), random_tensor({4, 2, 2}, 1)),
               DimensionError);
}

TEST(OutputLossProperty, GibbsNonNegative) {
  Rng rng(12);
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const Shape shape = {2 + rng.below(6), 1 + rng.below(3), 1 + rng.below(3)};
    const double mag = 0.1 + 20 * rng.uniform();
    const auto s = random_tensor(shape, 2 * trial, -mag, mag);
    const auto t = random_tensor(shape, 2 * trial + 1, -mag, mag);
    EXPECT_GE(output_similarity_loss(s, t).item(), -1e-12) << trial;
  }
}

TEST(CrossEntropy, UniformTwoClassIsLn2) {
  const auto r = cross_entropy_loss(Tensor<double>({2, 1, 1}), LabelMap{1, 1, {0}});
  EXPECT_NEAR(r.loss.item(), std::log(2.0), 1e-15);
  EXPECT_EQ(r.counted, 1u);
}

TEST(CrossEntropy, SaturatedLogitNearZero) {
  Tensor<double> logits({2, 1, 1});
  logits[1] = 30;
  EXPECT_LT(cross_entropy_loss(logits, LabelMap{1, 1, {1}}).loss.item(), 1e-12);
}

TEST(CrossEntropy, MatchesLoopOracle) {
  const auto logits = random_tensor({3, 2, 2}, 7, -3, 3);
  const LabelMap labels{2, 2, {0, 2, kIgnoreLabel, 1}};
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < 4; ++p) {
    if (labels.values[p] == kIgnoreLabel) continue;
    double z = 0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits[k * 4 + p]);
    acc += std::log(z) - logits[labels.values[p] * 4 + p];
    ++n;
  }
  const auto r = cross_entropy_loss(logits, labels);
  EXPECT_EQ(r.counted, 3u);
  EXPECT_NEAR(r.loss.item(), acc / n, 1e-12);
}

TEST(CrossEntropy, AllIgnoredIsFlaggedZero) {
  const auto r = cross_entropy_loss(random_tensor({3, 1, 2}, 1),
                                    LabelMap{1, 2, {kIgnoreLabel, kIgnoreLabel}});
  EXPECT_TRUE(r.all_ignored);
  EXPECT_EQ(r.loss.item(), 0.0);
}

TEST(CrossEntropy, OutOfRangeLabelRaises) {
  EXPECT_THROW(cross_entropy_loss(random_tensor({3, 1, 1}, 1), LabelMap{1, 1, {3}}),
               ArgumentError);
  EXPECT_THROW(cross_entropy_loss(random_tensor({3, 1, 1}, 1), LabelMap{1, 1, {-1}}),
               ArgumentError);
}

TEST(LabelMap, FromTensor) {
  const LabelMap m = LabelMap::from_tensor(Tensor<float>({1, 1, 3}, {0.f, 4.f, 255.f}));
  EXPECT_EQ(m.h, 1u);
  EXPECT_EQ(m.w, 3u);
  EXPECT_EQ(m.values, (std::vector<std::int32_t>{0, 4, 255}));
  EXPECT_THROW(LabelMap::from_tensor(Tensor<float>({1, 2}, {0.f, 1.5f})), ArgumentError);
}

class DistillStep : public ::testing::Test {
 protected:
  static constexpr std::size_t kClasses = 5;
  SeaFormerModel<double> teacher = build_variant<double>("T", kClasses, Task::kSeg, 1);
  SeaFormerModel<double> student = build_variant<double>("T", kClasses, Task::kSeg, 2);
  Tensor<double> x = random_tensor({3, 128, 128}, 3);
  LabelMap labels = random_labels(16, 16, kClasses, 4);

  DistillResult<double> run(const DistillConfig& cfg, UpsampleKind kind = UpsampleKind::kMobileNet) {
    const auto head = make_distill_head<double>(student.spec, kind, 5);
    return distill_step(teacher, student, head, x, labels, cfg);
  }
};

TEST_F(DistillStep, SelfDistillationIdentities) {
  DistillConfig cfg;
  cfg.same_resolution = true;
  const auto head = make_distill_head<double>(teacher.spec, cfg.upsample, 5);
  const auto r = distill_step(teacher, teacher, head, random_tensor({3, 64, 64}, 6),
                              random_labels(8, 8, kClasses, 7), cfg);
  EXPECT_NEAR(r.report.l_feat, -1.0, 1e-12);
  EXPECT_EQ(r.report.l_out, 0.0);
  EXPECT_EQ(r.report.l_cls, r.report.l_cross);
  EXPECT_EQ(r.report.total, r.report.l_cls + r.report.l_cross + r.report.l_feat + r.report.l_out);
}

TEST_F(DistillStep, TotalIsExactSumAndBoundsHold) {
  const auto r = run(DistillConfig{}).report;
  EXPECT_EQ(r.total, r.l_cls + r.l_cross + r.l_feat + r.l_out);
  EXPECT_GE(r.l_cls, 0.0);
  EXPECT_GE(r.l_cross, 0.0);
  EXPECT_GE(r.l_out, 0.0);
  EXPECT_GE(r.l_feat, -1.0);
  EXPECT_LE(r.l_feat, 1.0);
  EXPECT_FALSE(r.labels_all_ignored);
}

TEST_F(DistillStep, LossLadderTogglesTerms) {
  const char* ladder[] = {"cls", "cls,out", "cls,out,feat", "cls,out,feat,cross"};
  std::set<double> totals;
  for (const char* losses : ladder) {
    DistillConfig cfg;
    set_losses(cfg, losses);
    const auto r = run(cfg).report;
    const std::string l = losses;
    EXPECT_TRUE(std::isfinite(r.total)) << l;
    if (l.find("out") == std::string::npos) EXPECT_EQ(r.l_out, 0.0) << l;
    if (l.find("feat") == std::string::npos) EXPECT_EQ(r.l_feat, 0.0) << l;
    if (l.find("cross") == std::string::npos) EXPECT_EQ(r.l_cross, 0.0) << l;
    EXPECT_NE(r.l_cls, 0.0);
    totals.insert(r.total);
  }
  EXPECT_EQ(totals.size(), 4u);
  DistillConfig bad;
  EXPECT_THROW(set_losses(bad, "cls,kd"), ConfigError);
}

TEST_F(DistillStep, UpsampleVariantsGiveDifferentFeatureLoss) {
  std::set<double> feats;
  for (UpsampleKind k : {UpsampleKind::kBilinear, UpsampleKind::kMobileNet, UpsampleKind::kConv}) {
    feats.insert(run(DistillConfig{}, k).report.l_feat);
  }
  EXPECT_EQ(feats.size(), 3u);
}

TEST_F(DistillStep, ReportJsonIsFlat) {
  const auto r = run(DistillConfig{}).report;
  const nlohmann::json j = r;
  for (const char* key : {"l_cls", "l_cross", "l_feat", "l_out", "total", "labels_all_ignored"}) {
    ASSERT_TRUE(j.contains(key)) << key;
    EXPECT_FALSE(j[key].is_structured()) << key;
  }
  EXPECT_EQ(j["total"].get<double>(), r.total);
}

TEST_F(DistillStep, IndivisibleInputRaises) {
  const auto head = make_distill_head<double>(student.spec, UpsampleKind::kMobileNet, 5);
  EXPECT_THROW(distill_step(teacher, student, head, random_tensor({3, 64, 64}, 1),
                            random_labels(8, 8, kClasses, 1), DistillConfig{}),
               InputError);
}

TEST_F(DistillStep, DifferentFamiliesRaise) {
  auto other = build_variant<double>("S", kClasses, Task::kSeg, 2);
  const auto head = make_distill_head<double>(other.spec, UpsampleKind::kMobileNet, 5);
  EXPECT_THROW(distill_step(teacher, other, head, x, labels, DistillConfig{}), ConfigError);
}

TEST(DistillGradient, MatchesFiniteDifferences) {
  const auto report = run_gradcheck(GradScope::kDistill, 0, default_threshold(GradScope::kDistill));
  EXPECT_TRUE(report.pass()) << report.max_rel_error();
  EXPECT_LT(report.max_rel_error(), 1e-4);
}

}  // namespace
}  // namespace seaformer
