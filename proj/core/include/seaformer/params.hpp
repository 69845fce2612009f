// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include "seaformer/tensor.hpp"

namespace seaformer {

enum class ParamRole {
  kWeight,
  kBias,
  kBnGamma,
  kBnBeta,
  kBnRunningMean,
  kBnRunningVar,
  kPosEmbed,
};

std::string_view role_name(ParamRole role);
ParamRole role_from_name(std::string_view name);

/// Learned parameters take gradients; running statistics do not and are not
/// included in parameter counts.
inline bool is_trainable(ParamRole role) {
  return role != ParamRole::kBnRunningMean && role != ParamRole::kBnRunningVar;
}

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, ParamRole role, Tensor<T>& t)>;

/// "a" + "b" -> "a.b"; empty prefix yields just `name`.
std::string join_name(std::string_view prefix, std::string_view name);

/// Total element count of trainable parameters of anything with
/// `visit(prefix, visitor)`.
template <typename T, typename Module>
std::uint64_t count_params(Module& module) {
  std::uint64_t total = 0;
  module.visit("", ParamVisitor<T>([&](const std::string&, ParamRole role, Tensor<T>& t) {
                 if (is_trainable(role)) total += t.numel();
               }));
  return total;
}

/// Writes every visited tensor as `<dir>/<name>.stn` (float32) plus
/// `<dir>/manifest.json` listing name, role and shape.
template <typename T>
void save_bundle(const std::filesystem::path& dir,
                 const std::function<void(const ParamVisitor<T>&)>& visit_all);

/// Loads a bundle written by save_bundle into the visited tensors. Missing
/// entries or shape mismatches raise ConfigError; malformed files FormatError.
template <typename T>
void load_bundle(const std::filesystem::path& dir,
                 const std::function<void(const ParamVisitor<T>&)>& visit_all);

}  // namespace seaformer
