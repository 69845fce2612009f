// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "seaformer/tensor.hpp"

namespace seaformer {

inline constexpr std::int32_t kIgnoreLabel = 255;

/// H x W integer class map; kIgnoreLabel marks positions without a label.
struct LabelMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> values;

  /// From an H x W (or 1 x H x W) tensor of integer-valued floats. Throws
  /// ArgumentError on non-integer values.
  static LabelMap from_tensor(const Tensor<float>& t);
};

/// Mean over positions of -cos(f_s[:, h, w], f_t[:, h, w]). Positions where
/// either vector has zero norm contribute 0. Returns shape [1].
template <typename T>
Tensor<T> feature_similarity_loss(const Tensor<T>& student, const Tensor<T>& teacher);

/// Mean over positions of KL(softmax(teacher / tau) || softmax(student / tau))
/// across the class axis. Returns shape [1].
template <typename T>
Tensor<T> output_similarity_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                                 double temperature = 1.0);

template <typename T>
struct CrossEntropyResult {
  Tensor<T> loss;  // shape [1]
  std::size_t counted = 0;
  bool all_ignored = false;  // loss is defined as 0 in that case
};

/// Mean -log softmax(logits)[label] over non-ignored positions.
template <typename T>
CrossEntropyResult<T> cross_entropy_loss(const Tensor<T>& logits, const LabelMap& labels);

}  // namespace seaformer
