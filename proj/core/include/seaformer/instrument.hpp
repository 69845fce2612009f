// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace seaformer {

/// Multiply-accumulate tally gathered by a MacRecorder.
struct MacTally {
  std::uint64_t total = 0;
  std::map<std::string, std::uint64_t> by_op;
  // Keyed by the '/'-joined label path active when the op ran ("" if none).
  std::map<std::string, std::uint64_t> by_label;

  /// Total minus everything recorded under a label path containing `segment`
  /// as one of its '/'-separated components.
  std::uint64_t excluding(std::string_view segment) const;
  /// Sum over label paths whose first components equal `prefix`.
  std::uint64_t under(std::string_view prefix) const;
};

/// Collects MACs reported by kernels on the current thread while alive.
/// Recorders nest; every live recorder sees every op.
class MacRecorder {
 public:
  MacRecorder();
  ~MacRecorder();
  MacRecorder(const MacRecorder&) = delete;
  MacRecorder& operator=(const MacRecorder&) = delete;

  const MacTally& tally() const noexcept { return tally_; }
  std::uint64_t total() const noexcept { return tally_.total; }

 private:
  friend void record_macs(std::string_view op, std::uint64_t macs);
  MacTally tally_;
};

/// Called by kernels. No-op when no recorder is live.
void record_macs(std::string_view op, std::uint64_t macs);

/// Pushes a label onto the thread's label path for its lifetime.
class MacLabel {
 public:
  explicit MacLabel(std::string_view label);
  ~MacLabel();
  MacLabel(const MacLabel&) = delete;
  MacLabel& operator=(const MacLabel&) = delete;

 private:
  std::size_t previous_size_;
};

/// While alive, kernels allocate outputs of the right shape and report MACs
/// but skip arithmetic. Used to count models too large to evaluate cheaply.
class ShapeOnlyScope {
 public:
  ShapeOnlyScope();
  ~ShapeOnlyScope();
  ShapeOnlyScope(const ShapeOnlyScope&) = delete;
  ShapeOnlyScope& operator=(const ShapeOnlyScope&) = delete;

 private:
  bool previous_;
};

bool shape_only() noexcept;

/// Records which side of every kink (relu6 clamp, max selection) each
/// element landed on. The gradient checker compares signatures between the
/// base point and the perturbed points to detect differencing across a kink.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  const std::vector<std::uint32_t>& signature() const noexcept { return signature_; }

 private:
  friend void record_branch(std::uint32_t);
  friend bool branch_recording() noexcept;
  std::vector<std::uint32_t> signature_;
  BranchRecorder* previous_;
};

bool branch_recording() noexcept;
void record_branch(std::uint32_t branch);

}  // namespace seaformer
