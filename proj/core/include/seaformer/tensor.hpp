// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace seaformer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Row-major strides for `shape`.
std::vector<std::size_t> row_major_strides(const Shape& shape);

/// Identity of a tensor on a tape. `tape == 0` means untracked.
struct NodeRef {
  std::uint64_t tape = 0;
  std::int64_t id = -1;
};

/// Dense row-major N-d array. Precision is the template argument: double for
/// gradient checks, float for benchmark paths.
///
/// A default-constructed Tensor is a null placeholder (`empty()`); every other
/// tensor has rank >= 1 and all dims >= 1.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds real values");

 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return values_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  std::span<const T> values() const noexcept { return values_; }
  // Writable view for kernels filling a freshly allocated output.
  std::span<T> values() noexcept { return values_; }

  T operator[](std::size_t i) const { return values_[i]; }
  T& operator[](std::size_t i) { return values_[i]; }

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;
  T& at(std::initializer_list<std::size_t> index);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  /// Same values without tape identity.
  Tensor detached() const {
    Tensor out = *this;
    out.node_ = NodeRef{};
    return out;
  }

  const NodeRef& node() const noexcept { return node_; }
  void set_node(NodeRef node) noexcept { node_ = node; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> values_;
  NodeRef node_;
};

/// True when both tensors have identical shapes and bitwise-equal values.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace seaformer
