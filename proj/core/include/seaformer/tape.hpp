// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "seaformer/tensor.hpp"

namespace seaformer {

/// Maps the cotangent of one recorded output to one cotangent per input.
/// An entry may be left empty (default-constructed) for inputs that carry no
/// gradient; otherwise its shape must equal the forward input's shape.
template <typename T>
using VjpFn = std::function<std::vector<Tensor<T>>(const Tensor<T>&)>;

template <typename T>
struct TapeNode {
  std::string name;
  std::vector<std::int64_t> inputs;  // -1 for inputs not tracked by this tape
  std::vector<Shape> input_shapes;
  std::int64_t output = -1;
  Shape output_shape;
  VjpFn<T> vjp;
};

/// Ordered record of taped operations. Ids are assigned in creation order,
/// so nodes are topologically sorted by construction.
///
/// A tape only records while it is installed with TapeScope on the current
/// thread. Tensors created outside a scope are untracked constants.
template <typename T>
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t uid() const noexcept { return uid_; }

  /// Returns a copy of `x` registered as a differentiable leaf.
  Tensor<T> watch(const Tensor<T>& x);

  /// True when `x` was produced by (or registered on) this tape.
  bool tracks(const Tensor<T>& x) const noexcept { return x.node().tape == uid_; }

  /// Records `out = op(inputs)` and stamps `out` with a fresh node id.
  void record(std::string name, const std::vector<const Tensor<T>*>& inputs, Tensor<T>& out,
              VjpFn<T> vjp);

  const std::vector<TapeNode<T>>& nodes() const noexcept { return nodes_; }
  const std::map<std::int64_t, Shape>& leaves() const noexcept { return leaves_; }

  /// Every node's tracked inputs precede it.
  bool is_topological() const;

 private:
  std::uint64_t uid_;
  std::int64_t next_id_ = 0;
  std::vector<TapeNode<T>> nodes_;
  std::map<std::int64_t, Shape> leaves_;
};

/// Installs `tape` as the current thread's recording tape for the scope's
/// lifetime. Scopes nest; the previous tape is restored on exit.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Tape installed on this thread, or nullptr.
template <typename T>
Tape<T>* active_tape() noexcept;

/// Active tape if at least one of `inputs` is tracked by it, else nullptr.
/// Ops call this first so untaped forwards never build closures.
template <typename T>
Tape<T>* tracking_tape(std::initializer_list<const Tensor<T>*> inputs) noexcept;

/// Reverse-mode sweep from `output` seeded with `seed` (same shape as
/// `output`). Returns one gradient per leaf; unused leaves get zeros.
template <typename T>
std::map<std::int64_t, Tensor<T>> backward(const Tape<T>& tape, const Tensor<T>& output,
                                           const Tensor<T>& seed);

/// Scalar-output convenience: seed is 1.
template <typename T>
std::map<std::int64_t, Tensor<T>> backward(const Tape<T>& tape, const Tensor<T>& output);

/// Gradient for a watched tensor out of a backward() result.
template <typename T>
const Tensor<T>& grad_of(const std::map<std::int64_t, Tensor<T>>& grads, const Tensor<T>& leaf);

#ifdef SEAFORMER_FAULT_INJECTION
/// Test hook: VJPs recorded under `op_name` have their cotangents negated.
/// Empty string disables. Process-wide.
void set_vjp_fault(const std::string& op_name);
std::string vjp_fault();
#endif

extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;

}  // namespace seaformer
