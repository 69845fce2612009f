#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <gtest/gtest.h>

#include "seaformer/checks.hpp"
#include "seaformer/errors.hpp"
#include "seaformer/ops.hpp"
#include "seaformer/stn_io.hpp"
#include "seaformer/tape.hpp"
#include "test_support.hpp"

namespace seaformer {
namespace {

using testing::expect_all_near;
using testing::random_tensor;

Tensor<double> loop_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = s;
    }
  return c;
}

TEST(TensorTest, RejectsRankZeroAndZeroDims) {
  EXPECT_THROW(Tensor<double>(Shape{}), DimensionError);
  EXPECT_THROW(Tensor<double>(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor<double>(Shape{2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(TensorTest, NumelIsProductOfDims) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s = testing::random_shape(rng, 1 + rng.below(4), 5);
    Tensor<float> t(s);
    std::size_t p = 1;
    for (auto d : s) p *= d;
    EXPECT_EQ(t.numel(), p);
    EXPECT_EQ(t.values().size(), p);
  }
}

TEST(MatmulTest, Identity) {
  const Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  const Tensor<double> b({2, 1}, {5, 7});
  const auto c = matmul(eye, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 5);
  EXPECT_EQ(c[1], 7);
}

TEST(MatmulTest, OnesGiveInnerDim) {
  const auto c = matmul(Tensor<double>({2, 3}, 1.0), Tensor<double>({3, 4}, 1.0));
  EXPECT_EQ(c.shape(), (Shape{2, 4}));
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(c[i], 3.0);
}

TEST(MatmulTest, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(7), n = 1 + rng.below(7);
    const auto a = random_tensor({m, k}, seed * 2 + 1);
    const auto b = random_tensor({k, n}, seed * 2 + 2);
    expect_all_near(matmul(a, b), loop_matmul(a, b), 1e-12);
  }
}

TEST(MatmulTest, MismatchNamesBothShapes) {
  try {
    matmul(Tensor<double>({2, 3}), Tensor<double>({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(MatmulTest, Associative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), l = 1 + rng.below(6),
                      n = 1 + rng.below(6);
    const auto a = random_tensor({m, k}, seed * 3 + 1);
    const auto b = random_tensor({k, l}, seed * 3 + 2);
    const auto c = random_tensor({l, n}, seed * 3 + 3);
    EXPECT_LT(testing::max_rel_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), 1.0), 1e-9);
  }
}

TEST(SoftmaxTest, UniformRow) {
  const auto y = softmax(Tensor<double>({3}, 0.0), 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, LargeLogitsDoNotOverflow) {
  const auto y = softmax(Tensor<double>({2}, {1000, 0}), 0);
  EXPECT_TRUE(std::isfinite(y[0]) && std::isfinite(y[1]));
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(SoftmaxTest, MatchesDirectFormula) {
  const auto x = random_tensor({4, 5}, 7, -3, 3);
  const auto y = softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(x.at({r, c}));
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(y.at({r, c}), std::exp(x.at({r, c})) / z, 1e-12);
  }
}

TEST(SoftmaxTest, SlicesSumToOneAtLargeMagnitude) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const Shape s = testing::random_shape(rng, 3, 5);
    const std::size_t axis = rng.below(3);
    const auto x = random_tensor(s, seed + 500, -1e3, 1e3);
    const auto y = sum_along(softmax(x, axis), axis);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], 1.0, 1e-9);
  }
}

TEST(PermuteTest, ShapeExample) {
  const auto y = permute(Tensor<double>({2, 3, 4}), {2, 0, 1});
  EXPECT_EQ(y.shape(), (Shape{4, 2, 3}));
}

TEST(PermuteTest, IdentityOrderIsIdentity) {
  const auto x = random_tensor({2, 3, 4}, 3);
  EXPECT_TRUE(bitwise_equal(permute(x, {0, 1, 2}), x));
}

TEST(PermuteTest, RejectsNonPermutation) {
  const Tensor<double> x({2, 3});
  EXPECT_THROW(permute(x, {0, 0}), ArgumentError);
  EXPECT_THROW(permute(x, {0}), ArgumentError);
  EXPECT_THROW(permute(x, {0, 2}), ArgumentError);
}

TEST(PermuteTest, InverseRoundTrip) {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rank = 1 + rng.below(4);
    const Shape s = testing::random_shape(rng, rank, 4);
    std::vector<std::size_t> order(rank);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = rank; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::size_t> inverse(rank);
    for (std::size_t i = 0; i < rank; ++i) inverse[order[i]] = i;
    const auto x = random_tensor(s, 900 + trial);
    EXPECT_TRUE(bitwise_equal(permute(permute(x, order), inverse), x));
  }
}

TEST(ElementwiseTest, SigmoidAndRelu6Values) {
  EXPECT_EQ(sigmoid(Tensor<double>::scalar(0.0)).item(), 0.5);
  const auto r = relu6(Tensor<double>({3}, {-1, 3, 7}));
  EXPECT_EQ(r[0], 0);
  EXPECT_EQ(r[1], 3);
  EXPECT_EQ(r[2], 6);
}

TEST(ElementwiseTest, BroadcastAddMatchesLoop) {
  const auto a = random_tensor({3, 1, 4}, 1);
  const auto b = random_tensor({2, 1}, 2);
  const auto c = add(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 2, 4}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 4; ++k)
        EXPECT_EQ(c.at({i, j, k}), a.at({i, 0, k}) + b.at({j, 0}));
  EXPECT_THROW(add(Tensor<double>({2, 3}), Tensor<double>({4})), DimensionError);
}

TEST(ElementwiseTest, BroadcastShapeRules) {
  EXPECT_EQ(broadcast_shape({5, 1, 3}, {4, 1}), (Shape{5, 4, 3}));
  EXPECT_EQ(broadcast_shape({1}, {2, 2}), (Shape{2, 2}));
  EXPECT_THROW(broadcast_shape({3}, {4}), DimensionError);
}

TEST(TapeTest, GradientOfSumIsOnes) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto x = tape.watch(random_tensor({2, 3}, 4));
  const auto grads = backward(tape, sum(x));
  const auto& g = grad_of(grads, x);
  for (std::size_t i = 0; i < g.numel(); ++i) EXPECT_EQ(g[i], 1.0);
}

TEST(TapeTest, GradientOfSumOfSquares) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto x = tape.watch(Tensor<double>({3}, {1, 2, 3}));
  const auto grads = backward(tape, sum(mul(x, x)));
  const auto& g = grad_of(grads, x);
  EXPECT_EQ(g[0], 2);
  EXPECT_EQ(g[1], 4);
  EXPECT_EQ(g[2], 6);
}

TEST(TapeTest, UnusedLeafGetsZeros) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto x = tape.watch(Tensor<double>({2}, 1.0));
  const auto unused = tape.watch(Tensor<double>({4}, 1.0));
  const auto grads = backward(tape, sum(x));
  const auto& g = grad_of(grads, unused);
  EXPECT_EQ(g.shape(), (Shape{4}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(TapeTest, EmptyTapeGivesEmptyMap) {
  Tape<double> tape;
  const Tensor<double> y({1}, 3.0);
  EXPECT_TRUE(backward(tape, y).empty());
}

TEST(TapeTest, SeedShapeMustMatch) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto x = tape.watch(Tensor<double>({2}, 1.0));
  const auto y = scale(x, 2.0);
  EXPECT_THROW(backward(tape, y, Tensor<double>({3}, 1.0)), DimensionError);
}

TEST(TapeTest, OpsOutsideScopeAreUntracked) {
  Tape<double> tape;
  Tensor<double> x;
  {
    TapeScope<double> scope(tape);
    x = tape.watch(Tensor<double>({2}, 1.0));
  }
  const auto y = mul(x, x);
  EXPECT_FALSE(tape.tracks(y));
  EXPECT_TRUE(tape.nodes().empty());
}

TEST(TapeTest, OtherThreadDoesNotRecord) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto x = tape.watch(Tensor<double>({2}, 1.0));
  bool tracked = true;
  std::thread t([&] { tracked = tape.tracks(mul(x, x)); });
  t.join();
  EXPECT_FALSE(tracked);
  EXPECT_TRUE(tape.nodes().empty());
}

TEST(TapeTest, RandomCompositionsStayTopological) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    std::vector<Tensor<double>> pool;
    for (int i = 0; i < 3; ++i) pool.push_back(tape.watch(random_tensor({2, 3}, seed * 10 + i)));
    for (int step = 0; step < 15; ++step) {
      const auto& a = pool[rng.below(pool.size())];
      const auto& b = pool[rng.below(pool.size())];
      switch (rng.below(4)) {
        case 0: pool.push_back(add(a, b)); break;
        case 1: pool.push_back(mul(a, b)); break;
        case 2: pool.push_back(sigmoid(a)); break;
        default: pool.push_back(softmax(a, 1)); break;
      }
    }
    EXPECT_TRUE(tape.is_topological());
    const auto grads = backward(tape, sum(pool.back()));
    for (const auto& [id, g] : grads) EXPECT_EQ(g.shape(), (Shape{2, 3}));
  }
}

TEST(TapeTest, PrimitiveGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto report = run_gradcheck(GradScope::kOps, seed, 1e-5);
    for (const auto& e : report.entries) {
      EXPECT_TRUE(e.pass) << e.name << " seed " << seed << " rel " << e.max_rel_error;
    }
  }
}

#ifdef SEAFORMER_FAULT_INJECTION
TEST(TapeTest, InjectedFaultNegatesOneOp) {
  const auto x0 = random_tensor({2, 2}, 8);
  const auto w0 = random_tensor({2, 2}, 9);
  auto grad = [&] {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const auto x = tape.watch(x0);
    const auto y = sum(sigmoid(matmul(x, w0)));
    return grad_of(backward(tape, y), x);
  };
  const auto good = grad();
  set_vjp_fault("matmul");
  const auto bad = grad();
  set_vjp_fault("");
  for (std::size_t i = 0; i < good.numel(); ++i) EXPECT_DOUBLE_EQ(bad[i], -good[i]);
}

TEST(TapeTest, GradcheckCatchesWrongSignVjp) {
  set_vjp_fault("softmax");
  const bool pass = run_gradcheck(GradScope::kOps, 0, 1e-5).pass();
  set_vjp_fault("");
  EXPECT_FALSE(pass);
}
#endif

TEST(StnTest, ByteLayout) {
  const Tensor<float> t({2}, std::vector<float>{1.0f, -2.0f});
  const std::vector<std::uint8_t> expected = {'S', 'T', 'N', 'S', 1, 0, 0, 0, 2, 0, 0, 0,
                                              0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(encode_stn(t), expected);
}

TEST(StnTest, RoundTripRandomShapes) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Shape s = testing::random_shape(rng, 1 + rng.below(4), 6);
    const auto t = random_tensor(s, trial).cast<float>();
    EXPECT_TRUE(bitwise_equal(decode_stn(encode_stn(t)), t));
  }
}

TEST(StnTest, ErrorsCarryOffsets) {
  const auto good = encode_stn(Tensor<float>({2, 3}, 1.5f));
  auto offset_of = [](const std::vector<std::uint8_t>& bytes) -> std::int64_t {
    try {
      decode_stn(bytes);
    } catch (const FormatError& e) {
      return static_cast<std::int64_t>(e.offset());
    }
    return -1;
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(offset_of(bad_magic), 0);
  EXPECT_EQ(offset_of({good.begin(), good.begin() + 6}), 6);
  // Header is 16 bytes; the sixth value is cut, so decoding fails at its start.
  EXPECT_EQ(offset_of({good.begin(), good.end() - 3}), 16 + 4 * 5);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(offset_of(trailing), static_cast<std::int64_t>(good.size()));
  auto zero_rank = good;
  zero_rank[4] = 0;
  EXPECT_EQ(offset_of(zero_rank), 4);
}

TEST(StnTest, ChecksumIsStable) {
  const auto t = random_tensor({3, 4}, 2).cast<float>();
  EXPECT_EQ(checksum(t), checksum(decode_stn(encode_stn(t))));
  auto u = t;
  u[0] += 1.0f;
  EXPECT_NE(checksum(t), checksum(u));
}

}  // namespace
}  // namespace seaformer
