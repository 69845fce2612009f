#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "seaformer/analysis.hpp"
#include "seaformer/backbone.hpp"
#include "seaformer/errors.hpp"
#include "seaformer/ops.hpp"
#include "seaformer/params.hpp"
#include "test_support.hpp"

namespace seaformer {
namespace {

using testing::random_tensor;
using testing::zero_fill;

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool has_sea(const std::vector<LayerEntry>& stage) {
  return std::any_of(stage.begin(), stage.end(),
                     [](const LayerEntry& e) { return e.kind == LayerEntry::Kind::kSea; });
}

TEST(VariantSpec, TinyStageFiveAndSixChannels) {
  const VariantSpec t = variant_spec("T");
  EXPECT_EQ(t.stage_channels(4), 128u);
  EXPECT_EQ(t.stage_channels(5), 160u);
}

TEST(VariantSpec, LargeStageFourHasSea38) {
  const VariantSpec l = variant_spec("L");
  bool found = false;
  for (const LayerEntry& e : l.stages[3]) {
    if (e.kind == LayerEntry::Kind::kSea && e.layers == 3 && e.heads == 8) found = true;
  }
  EXPECT_TRUE(found);
}

TEST(VariantSpec, SeaPlacementPerVariant) {
  for (const std::string& name : variant_names()) {
    const VariantSpec v = variant_spec(name);
    for (std::size_t s = 0; s < 3; ++s) EXPECT_FALSE(has_sea(v.stages[s])) << name << s;
    EXPECT_TRUE(has_sea(v.stages[4])) << name;
    EXPECT_TRUE(has_sea(v.stages[5])) << name;
    EXPECT_EQ(has_sea(v.stages[3]), name == "L") << name;
  }
}

TEST(VariantSpec, BaseFusionDims) {
  const VariantSpec b = variant_spec("B");
  EXPECT_EQ(b.fusion_dims[0], 128u);
  EXPECT_EQ(b.fusion_dims[1], 160u);
}

TEST(VariantSpec, UnknownNameListsValidOnes) {
  try {
    variant_spec("XL");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* n : {"T", "S", "B", "L"}) EXPECT_NE(msg.find(n), std::string::npos);
  }
  EXPECT_THROW(build_variant<double>("Q", 10, Task::kSeg, 0), ConfigError);
}

TEST(VariantSpec, JsonRoundTrip) {
  for (const std::string& name : variant_names()) {
    const nlohmann::json j = variant_spec(name);
    const auto back = j.get<VariantSpec>();
    EXPECT_EQ(back, variant_spec(name)) << name;
    EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  }
}

TEST(VariantSpec, MalformedJsonRaisesConfigError) {
  nlohmann::json good = variant_spec("T");

  nlohmann::json missing = good;
  missing.erase("fusion_dims");
  EXPECT_THROW(missing.get<VariantSpec>(), ConfigError);

  nlohmann::json bad_kind = good;
  bad_kind["stages"][3][0] = nlohmann::json::array({"Pool", 3, 2});
  EXPECT_THROW(bad_kind.get<VariantSpec>(), ConfigError);

  nlohmann::json early_sea = good;
  early_sea["stages"][1].push_back(nlohmann::json::array({"Sea", 1, 2}));
  EXPECT_THROW(early_sea.get<VariantSpec>(), ConfigError);

  nlohmann::json five_stages = good;
  five_stages["stages"].erase(5);
  EXPECT_THROW(five_stages.get<VariantSpec>(), ConfigError);

  nlohmann::json short_mb = good;
  short_mb["stages"][2][0] = nlohmann::json::array({"MB", 3, 4});
  EXPECT_THROW(short_mb.get<VariantSpec>(), ConfigError);
}

TEST(BuildVariant, SameSeedIsBitwiseIdentical) {
  auto a = build_variant<double>("T", 10, Task::kSeg, 5);
  auto b = build_variant<double>("T", 10, Task::kSeg, 5);
  std::vector<Tensor<double>> pa, pb;
  a.visit("", ParamVisitor<double>([&](const std::string&, ParamRole, Tensor<double>& t) {
            pa.push_back(t);
          }));
  b.visit("", ParamVisitor<double>([&](const std::string&, ParamRole, Tensor<double>& t) {
            pb.push_back(t);
          }));
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bitwise_equal(pa[i], pb[i])) << i;

  auto c = build_variant<double>("T", 10, Task::kSeg, 6);
  std::size_t differing = 0, i = 0;
  c.visit("", ParamVisitor<double>([&](const std::string&, ParamRole, Tensor<double>& t) {
            if (!bitwise_equal(t, pa[i++])) ++differing;
          }));
  EXPECT_GT(differing, 0u);
}

TEST(Stem, SixtyFourGivesEightByEight) {
  auto m = build_variant<double>("T", 10, Task::kSeg, 0);
  const auto xs = stem_forward(m, random_tensor({3, 64, 64}, 1));
  EXPECT_EQ(xs.shape(), (Shape{m.spec.stage_channels(2), 8, 8}));
}

TEST(Stem, FiveTwelveGivesSixtyFour) {
  auto m = build_variant<float>("T", 10, Task::kSeg, 0);
  const Tensor<float> x({3, 512, 512}, 0.25f);
  const auto xs = stem_forward(m, x);
  EXPECT_EQ(xs.shape(), (Shape{m.spec.stage_channels(2), 64, 64}));
}

TEST(Stem, ConstantInputIsFinite) {
  auto m = build_variant<double>("S", 10, Task::kSeg, 3);
  const auto xs = stem_forward(m, Tensor<double>({3, 32, 32}, 1.0));
  for (double v : xs.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Stem, IndivisibleInputRaises) {
  auto m = build_variant<double>("T", 10, Task::kSeg, 0);
  EXPECT_THROW(stem_forward(m, random_tensor({3, 60, 64}, 1)), InputError);
  EXPECT_THROW(stem_forward(m, random_tensor({4, 64, 64}, 1)), InputError);
  EXPECT_THROW(seg_forward(m, random_tensor({3, 96, 64}, 1)), InputError);
}

TEST(ContextBranch, HalvesThreeTimes) {
  auto m = build_variant<double>("T", 10, Task::kSeg, 0);
  const auto xs = stem_forward(m, random_tensor({3, 64, 64}, 2));
  const auto ctx = context_branch_forward(m, xs);
  EXPECT_EQ(ctx[0].shape(), (Shape{m.spec.stage_channels(3), 4, 4}));
  EXPECT_EQ(ctx[1].shape(), (Shape{128, 2, 2}));
  EXPECT_EQ(ctx[2].shape(), (Shape{160, 1, 1}));
}

TEST(ContextBranch, SkippingSeaChangesOutputs) {
  auto m = build_variant<double>("T", 10, Task::kSeg, 0);
  const auto xs = stem_forward(m, random_tensor({3, 128, 128}, 3));
  const auto with = context_branch_forward(m, xs);
  ForwardOptions skip;
  skip.skip_sea = true;
  const auto without = context_branch_forward(m, xs, skip);
  // Stage 4 of T has no Sea entries, so it must agree exactly.
  EXPECT_TRUE(bitwise_equal(with[0], without[0]));
  EXPECT_GT(max_abs_diff(with[1], without[1]), 1e-6);
  EXPECT_GT(max_abs_diff(with[2], without[2]), 1e-6);
}

TEST(Fusion, ZeroContextLogitsHalveProjectedSpatial) {
  Rng rng(4);
  auto p = make_fusion_params<double>(6, 10, 8, rng);
  zero_fill(p.context.conv.weight);
  zero_fill(p.context.bn.beta);
  zero_fill(p.context.bn.running_mean);
  const auto spatial = random_tensor({6, 8, 8}, 5);
  const auto context = random_tensor({10, 2, 2}, 6);
  const auto out = fusion_block(spatial, context, p, FusionMode::kSigmoidMul);
  const auto proj = p.spatial.forward(spatial);
  ASSERT_EQ(out.shape(), proj.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.5 * proj[i]);
}

TEST(Fusion, SameResolutionIsExactProduct) {
  Rng rng(7);
  auto p = make_fusion_params<double>(6, 10, 8, rng);
  const auto spatial = random_tensor({6, 4, 4}, 8);
  const auto context = random_tensor({10, 4, 4}, 9);
  const auto out = fusion_block(spatial, context, p, FusionMode::kSigmoidMul);
  const auto a = p.spatial.forward(spatial);
  const auto c = p.context.forward(context);
  ASSERT_EQ(out.shape(), a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    EXPECT_DOUBLE_EQ(out[i], a[i] * (1.0 / (1.0 + std::exp(-c[i]))));
  }
}

TEST(Fusion, ModesDifferPairwise) {
  const std::vector<FusionMode> modes = {FusionMode::kSigmoidMul, FusionMode::kAdd,
                                         FusionMode::kMul, FusionMode::kSigmoidAdd};
  Rng rng(10);
  auto p = make_fusion_params<double>(6, 10, 8, rng);
  const auto spatial = random_tensor({6, 8, 8}, 11);
  const auto context = random_tensor({10, 4, 4}, 12);
  std::vector<Tensor<double>> outs;
  for (FusionMode m : modes) outs.push_back(fusion_block(spatial, context, p, m));
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (std::size_t j = i + 1; j < outs.size(); ++j) {
      EXPECT_GT(max_abs_diff(outs[i], outs[j]), 1e-6)
          << to_string(modes[i]) << " vs " << to_string(modes[j]);
    }
  }
}

TEST(Fusion, ContextLargerThanSpatialRaises) {
  Rng rng(13);
  auto p = make_fusion_params<double>(6, 10, 8, rng);
  EXPECT_THROW(fusion_block(random_tensor({6, 2, 2}, 1), random_tensor({10, 4, 4}, 2), p,
                            FusionMode::kSigmoidMul),
               DimensionError);
}

TEST(FusionMode, ParseRoundTrip) {
  for (FusionMode m : {FusionMode::kSigmoidMul, FusionMode::kAdd, FusionMode::kMul,
                       FusionMode::kSigmoidAdd}) {
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_fusion_mode("concat"), ConfigError);
  EXPECT_THROW(parse_task("det"), ConfigError);
}

TEST(SegForward, TinyLogitsShape) {
  auto m = build_variant<double>("T", 150, Task::kSeg, 0);
  const auto y = seg_forward(m, random_tensor({3, 64, 64}, 1));
  EXPECT_EQ(y.shape(), (Shape{150, 8, 8}));
}

TEST(SegForward, RequiresSegModel) {
  auto m = build_variant<double>("T", 10, Task::kCls, 0);
  EXPECT_THROW(seg_forward(m, random_tensor({3, 64, 64}, 1)), ConfigError);
}

TEST(SegForward, BaseParamsNearTarget) {
  auto m = build_variant<float>("B", 150, Task::kSeg, 0);
  const double p = static_cast<double>(count_params<float>(m));
  EXPECT_NEAR(p / 8.6e6, 1.0, 0.15) << p;
}

TEST(SegForward, TinyMacsNearTarget) {
  auto m = build_variant<float>("T", 150, Task::kSeg, 0);
  const double macs = static_cast<double>(mac_breakdown(m, 512, 512).at("total"));
  EXPECT_NEAR(macs / 0.6e9, 1.0, 0.25) << macs;
}

TEST(SegForward, MacBreakdownMatchesMeasuredForward) {
  auto m = build_variant<double>("T", 19, Task::kSeg, 0);
  const auto breakdown = mac_breakdown(m, 64, 128);
  const auto x = random_tensor({3, 64, 128}, 2);
  const std::uint64_t measured = count_macs([&] { seg_forward(m, x); });
  EXPECT_EQ(breakdown.at("total"), measured);
  std::uint64_t parts = 0;
  for (const auto& [k, v] : breakdown) {
    if (k != "total") parts += v;
  }
  EXPECT_EQ(parts, breakdown.at("total"));
}

TEST(ClsForward, ImageNetShape) {
  auto m = build_variant<float>("T", 1000, Task::kCls, 0);
  const auto y = cls_forward(m, Tensor<float>({3, 224, 224}, 0.1f));
  EXPECT_EQ(y.shape(), (Shape{1000}));
}

TEST(ClsForward, ZeroedClassifierGivesZeroLogits) {
  auto m = build_variant<double>("T", 7, Task::kCls, 0);
  zero_fill(m.cls_weight);
  zero_fill(m.cls_bias);
  const auto y = cls_forward(m, Tensor<double>({3, 64, 64}, 0.7));
  ASSERT_EQ(y.shape(), (Shape{7}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(ClsForward, SmallParamsNearTarget) {
  auto m = build_variant<float>("S", 1000, Task::kCls, 0);
  const double p = static_cast<double>(count_params<float>(m));
  EXPECT_NEAR(p / 4.2e6, 1.0, 0.15) << p;
}

TEST(ClsForward, RequiresClsModel) {
  auto m = build_variant<double>("T", 10, Task::kSeg, 0);
  EXPECT_THROW(cls_forward(m, random_tensor({3, 64, 64}, 1)), ConfigError);
}

TEST(ParamBreakdown, TotalMatchesCountParams) {
  for (Task task : {Task::kSeg, Task::kCls}) {
    auto m = build_variant<float>("S", 21, task, 0);
    const auto bd = param_breakdown(m);
    std::uint64_t parts = 0;
    for (const auto& [k, v] : bd) {
      if (k != "total") parts += v;
    }
    EXPECT_EQ(bd.at("total"), count_params<float>(m));
    EXPECT_EQ(parts, bd.at("total"));
  }
}

TEST(Bundle, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "seaformer_test_bundle";
  std::filesystem::remove_all(dir);
  auto a = build_variant<float>("T", 10, Task::kSeg, 1);
  save_bundle<float>(dir, [&](const ParamVisitor<float>& v) { a.visit("", v); });
  auto b = build_variant<float>("T", 10, Task::kSeg, 2);
  load_bundle<float>(dir, [&](const ParamVisitor<float>& v) { b.visit("", v); });
  Rng rng(3);
  const auto x = uniform_tensor<float>({3, 64, 64}, -1.0, 1.0, rng);
  EXPECT_TRUE(bitwise_equal(seg_forward(a, x), seg_forward(b, x)));

  auto wrong = build_variant<float>("S", 10, Task::kSeg, 2);
  EXPECT_THROW(
      load_bundle<float>(dir, [&](const ParamVisitor<float>& v) { wrong.visit("", v); }),
      ConfigError);
  std::filesystem::remove_all(dir);
}

// Properties.

TEST(BackboneProperty, StageDimsFollowScales) {
  Rng rng(20);
  auto m = build_variant<double>("T", 10, Task::kSeg, 0);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t h = 64 * (1 + rng.below(2));
    const std::size_t w = 64 * (1 + rng.below(3));
    const auto stages = forward_stages(m, random_tensor({3, h, w}, 30 + trial));
    for (std::size_t s = 0; s < 6; ++s) {
      const std::size_t f = std::size_t{2} << s;
      EXPECT_EQ(stages[s].shape(), (Shape{m.spec.stage_channels(s), h / f, w / f}))
          << h << "x" << w << " stage " << s + 1;
    }
  }
}

TEST(BackboneProperty, NoNonFiniteOverFiftySeeds) {
  auto m = build_variant<double>("T", 150, Task::kSeg, 0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto y = seg_forward(m, random_tensor({3, 64, 64}, seed, -3.0, 3.0));
    for (double v : y.values()) ASSERT_TRUE(std::isfinite(v)) << "seed " << seed;
  }
}

TEST(BackboneProperty, ParamsMonotoneAcrossVariants) {
  for (Task task : {Task::kSeg, Task::kCls}) {
    std::uint64_t prev = 0;
    for (const char* name : {"T", "S", "B", "L"}) {
      auto m = build_variant<float>(name, 150, task, 0);
      const std::uint64_t p = count_params<float>(m);
      EXPECT_GT(p, prev) << name << " " << to_string(task);
      prev = p;
    }
  }
}

TEST(BackboneProperty, ForwardBitwiseReproducible) {
  Rng rng(40);
  for (int trial = 0; trial < 3; ++trial) {
    const std::uint64_t seed = rng.below(1000);
    auto a = build_variant<double>("T", 5, Task::kSeg, seed);
    auto b = build_variant<double>("T", 5, Task::kSeg, seed);
    const auto x = random_tensor({3, 64, 64}, seed + 1);
    EXPECT_TRUE(bitwise_equal(seg_forward(a, x), seg_forward(b, x))) << seed;
  }
}

}  // namespace
}  // namespace seaformer
