// SPDX-License-Identifier: Apache-2.0
// Internal helpers shared by kernel translation units.
#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "seaformer/errors.hpp"
#include "seaformer/tape.hpp"
#include "seaformer/tensor.hpp"

namespace seaformer::detail {

template <typename T, typename MakeVjp>
VjpFn<T> make_vjp_for(MakeVjp& make_vjp, const Tensor<T>& out) {
  if constexpr (std::is_invocable_v<MakeVjp&, const Tensor<T>&>) {
    return make_vjp(out);
  } else {
    return make_vjp();
  }
}

/// Records `out` on the active tape when any input is tracked. `make_vjp` is
/// only invoked in that case, so untaped forwards never copy captures. It may
/// take the forward output as its argument.
template <typename T, typename MakeVjp>
Tensor<T> taped(std::string_view name, Tensor<T> out,
                std::initializer_list<const Tensor<T>*> inputs, MakeVjp&& make_vjp) {
  if (Tape<T>* tape = tracking_tape<T>(inputs)) {
    tape->record(std::string(name), std::vector<const Tensor<T>*>(inputs), out,
                 make_vjp_for<T>(make_vjp, out));
  }
  return out;
}

/// Variable-arity form of taped().
template <typename T, typename MakeVjp>
Tensor<T> taped_n(std::string_view name, Tensor<T> out, const std::vector<const Tensor<T>*>& inputs,
                  MakeVjp&& make_vjp) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return out;
  for (const Tensor<T>* in : inputs) {
    if (tape->tracks(*in)) {
      tape->record(std::string(name), inputs, out, make_vjp_for<T>(make_vjp, out));
      break;
    }
  }
  return out;
}

inline void check_axis(std::size_t axis, std::size_t rank, std::string_view op) {
  if (axis >= rank) {
    throw ArgumentError(std::string(op) + ": axis " + std::to_string(axis) +
                        " out of range for rank " + std::to_string(rank));
  }
}

/// Splits `shape` around `axis` into (outer, n, inner) for strided loops.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace seaformer::detail
