// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "seaformer/analysis.hpp"

// Ready-made verification suites shared by the CLI and the test binaries.
namespace seaformer {

enum class GradScope { kOps, kSea, kLayer, kDistill };

std::string_view to_string(GradScope s);
GradScope parse_grad_scope(std::string_view s);

/// Default pass threshold per scope: 1e-5, or 1e-4 for distillation.
double default_threshold(GradScope s);

/// Finite-difference check of one randomly drawn instance of the scope, in
/// double precision. Every primitive op for kOps; the SEA block with
/// adaptive masks and position embeddings for kSea; one seaformer layer for
/// kLayer; the total distillation loss over a 4-channel toy model for
/// kDistill.
GradCheckReport run_gradcheck(GradScope scope, std::uint64_t seed, double threshold);

struct OracleResult {
  std::string name;
  double value = 0;  // max abs difference
  double tolerance = 0;
  bool pass = false;
};

/// adaptive squeeze with uniform logits vs mean pooling, window attention
/// with one window vs global, zero position tables vs none (bitwise), and
/// the semantic branch at a single position vs 2 v.
std::vector<OracleResult> run_oracle_checks(std::uint64_t seed);

/// Attention kinds for scaling sweeps: sea, global, window (4 x 4), axial.
const std::vector<std::string>& attention_kinds();

/// MACs of one attention forward at hw x hw with `channels` channels, with
/// the q/k/v/output projections excluded. With `timed`, also the min wall
/// time over 3 real runs.
CostRow attention_cost_row(std::string_view kind, std::size_t hw, std::size_t channels,
                           std::uint64_t seed, bool timed);

CostReport attention_scaling(std::string_view kind, const std::vector<std::size_t>& sizes,
                             std::size_t channels, std::uint64_t seed, bool timed);

}  // namespace seaformer
