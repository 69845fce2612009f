#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "seaformer/nn.hpp"
#include "seaformer/tensor.hpp"

namespace seaformer::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
  Rng rng(seed);
  return uniform_tensor<double>(shape, lo, hi, rng);
}

// Random shape with `rank` dims, each in [1, max_dim].
inline Shape random_shape(Rng& rng, std::size_t rank, std::size_t max_dim) {
  Shape s(rank);
  for (auto& d : s) d = 1 + rng.below(max_dim);
  return s;
}

inline void expect_all_near(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(a[i], b[i], tol) << "at flat index " << i;
  }
}

// Max over elements of |a - b| / max(|a|, |b|, floor).
inline double max_rel_diff(const Tensor<double>& a, const Tensor<double>& b, double floor = 1e-8) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    m = std::max(m, std::abs(a[i] - b[i]) / d);
  }
  return m;
}

inline void zero_fill(Tensor<double>& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 0;
}

}  // namespace seaformer::testing
