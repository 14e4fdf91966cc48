#include "cimnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace cimnet {

std::size_t numel(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
TensorT<T>::TensorT(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(numel(shape_), fill);
}

template <typename T>
TensorT<T>::TensorT(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " needs " +
                         std::to_string(numel(shape_)) + " elements, got " +
                         std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t TensorT<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

template <typename T>
TensorT<T> TensorT<T>::reshaped(Shape shape) const& {
  return TensorT(std::move(shape), data_);
}

template <typename T>
TensorT<T> TensorT<T>::reshaped(Shape shape) && {
  return TensorT(std::move(shape), std::move(data_));
}

template <typename T>
void check_finite(const TensorT<T>& t, std::string_view op) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NonFiniteError(std::string(op) + " produced a non-finite value at index " +
                           std::to_string(i));
    }
  }
}

template <typename T>
void require_rank(const TensorT<T>& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

template class TensorT<float>;
template class TensorT<double>;
template void check_finite(const TensorT<float>&, std::string_view);
template void check_finite(const TensorT<double>&, std::string_view);
template void require_rank(const TensorT<float>&, std::size_t, std::string_view);
template void require_rank(const TensorT<double>&, std::size_t, std::string_view);

}  // namespace cimnet
