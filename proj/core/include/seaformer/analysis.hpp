// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "seaformer/instrument.hpp"
#include "seaformer/params.hpp"
#include "seaformer/tensor.hpp"

namespace seaformer {

/// MACs reported by instrumented kernels while `fn` runs on this thread.
std::uint64_t count_macs(const std::function<void()>& fn);
MacTally tally_macs(const std::function<void()>& fn);

struct ScalingFit {
  double slope = 0;
  double intercept = 0;
  double residual = 0;  // RMS of log-space residuals
};

/// Ordinary least squares of log(mac) on log(area). Needs at least 3 points
/// with at least two distinct areas, else InsufficientDataError.
ScalingFit fit_scaling(const std::vector<std::pair<double, double>>& area_mac);

struct CostRow {
  std::string label;
  std::size_t h = 0, w = 0, c = 0;
  std::uint64_t macs = 0;
  std::int64_t wall_ns = 0;  // 0 when not timed
};

struct CostReport {
  std::vector<CostRow> rows;

  ScalingFit fit() const;
  /// "label,h,w,c,macs,wall_ns" header plus one line per row.
  std::string csv() const;
  /// {"rows": [...], "fit": {...}}; wall times sit under a separate
  /// "timing" key so the rest is deterministic.
  nlohmann::json summary() const;
};

/// Central differences with h = rel_step * (1 + |x_i|). A non-finite
/// function value raises OracleError naming the element.
Tensor<double> numerical_gradient(const std::function<double(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double rel_step = 1e-6);

/// Gradient of <cotangent, f(x)> by the same central differences, with each
/// output differenced before the weighted sum. For large outputs this keeps
/// the rounding error of the total out of small gradient components.
Tensor<double> numerical_gradient(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, const Tensor<double>& cotangent,
                                  double rel_step = 1e-6);

struct TimingStats {
  std::int64_t min_ns = 0;
  std::int64_t median_ns = 0;
  std::size_t iters = 0;
};

/// Runs `fn` `warmup` times untimed, then `iters` (>= 3, else ArgumentError)
/// timed runs on the calling thread.
TimingStats time_kernel(const std::function<void()>& fn, std::size_t warmup, std::size_t iters);

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // elements skipped because differencing straddled a kink
  double max_rel_error = 0;
  std::size_t argmax = 0;
  double analytic = 0;  // at argmax
  double numeric = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::string label;
  double threshold = 0;
  std::vector<GradCheckEntry> entries;

  bool pass() const;
  double max_rel_error() const;
  void merge(const GradCheckReport& other);
};

void to_json(nlohmann::json& j, const GradCheckReport& r);

/// A differentiable input of a gradient check: the check overwrites the
/// tensor in place while probing, and restores it afterwards.
struct GradInput {
  std::string name;
  Tensor<double>* value = nullptr;
};

struct GradCheckOptions {
  double threshold = 1e-5;
  double rel_step = 1e-6;
  std::uint64_t seed = 0;         // drives the random output cotangent
  // Cotangent entries are uniform in +-loss_scale. Small scales put the
  // 1e-8 floor of relative_error above finite-difference rounding noise, so
  // gradients that are identically zero (softmax shift invariance) compare
  // as equal instead of as noise / 1e-8.
  double loss_scale = 1e-5;
  std::size_t kink_halvings = 6;  // step halvings tried when a kink is straddled
};

/// Compares tape gradients of <c, forward()> against central differences
/// for every element of every input, with c a random cotangent. Each
/// perturbed evaluation is compared branch-by-branch against the base point;
/// when a relu6 clamp or max selection flips, the step is halved, and the
/// element is skipped (counted in `kinks`) if it still flips.
GradCheckReport gradcheck(const std::string& label, const std::vector<GradInput>& inputs,
                          const std::function<Tensor<double>()>& forward,
                          const GradCheckOptions& options);

/// Collects every trainable parameter a module exposes through
/// `visit(..., visitor)` as gradient-check inputs.
template <typename Module, typename... Args>
std::vector<GradInput> grad_inputs_of(Module& module, Args&&... args);

/// Draws every parameter of a module from ranges that keep BN well
/// conditioned: gamma and running variance in [0.5, 1.5], everything else
/// in [-0.5, 0.5] (weights keep their init when `keep_weights`).
void randomize_params(const std::function<void(const ParamVisitor<double>&)>& visit,
                      std::uint64_t seed, bool keep_weights = false);

template <typename Module, typename... Args>
std::vector<GradInput> grad_inputs_of(Module& module, Args&&... args) {
  std::vector<GradInput> out;
  module.visit(std::forward<Args>(args)...,
               [&](const std::string& name, ParamRole role, Tensor<double>& t) {
                 if (is_trainable(role)) out.push_back({name, &t});
               });
  return out;
}

}  // namespace seaformer
