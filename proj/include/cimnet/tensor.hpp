#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cimnet/error.hpp"

namespace cimnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor (last dimension fastest). 4-D tensors are NCHW.
///
/// Every dimension is positive and `size() == numel(shape())`. A
/// default-constructed tensor is empty (rank 0) and only used as a
/// placeholder, e.g. for a gradient that has not been accumulated yet.
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;
  explicit TensorT(Shape shape, T fill = T{0});
  TensorT(Shape shape, std::vector<T> data);

  static TensorT scalar(T value) { return TensorT({1}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // NCHW element access; rank must be 4.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h,
              std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // Same data, new shape with the same element count.
  TensorT reshaped(Shape shape) const&;
  TensorT reshaped(Shape shape) &&;

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return TensorT<U>(shape_, std::move(out));
  }

  bool operator==(const TensorT& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Throws NonFiniteError naming `op` if any element is NaN or Inf.
template <typename T>
void check_finite(const TensorT<T>& t, std::string_view op);

// Throws DimensionError unless `t` has the given rank.
template <typename T>
void require_rank(const TensorT<T>& t, std::size_t rank, std::string_view op);

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace cimnet
