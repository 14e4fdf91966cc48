#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "cimnet/tensor.hpp"

namespace cimnet {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid as long as
/// the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const TensorT<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Differentiation record.
///
/// Every primitive appends one node holding its output value and, when any
/// input requires a gradient, a closure that maps the output gradient to
/// input gradients. backward() walks the nodes once, newest to oldest.
/// A tape is single-writer.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const TensorT<T>& grad_out)>;

  Var<T> leaf(TensorT<T> value, bool requires_grad = true);
  Var<T> constant(TensorT<T> value) { return leaf(std::move(value), false); }

  // Appends a primitive's output. `fn` may be empty for non-differentiable ops.
  Var<T> record(TensorT<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn,
                std::string_view op);

  const TensorT<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  // Zero-filled for tracked tensors that received no gradient; empty for
  // untracked ones.
  const TensorT<T>& grad(Var<T> v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  // Called by backward closures.
  void accumulate(std::size_t id, const TensorT<T>& g);

  void backward(Var<T> loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Folds a ReLU input's sign mask into activation_signature(); two
  // evaluations of the same function with equal signatures took the same
  // piecewise-linear branch everywhere.
  void note_activation(const TensorT<T>& pre);
  std::uint64_t activation_signature() const noexcept { return signature_; }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::uint64_t signature_ = 0;
};

template <typename T>
const TensorT<T>& Var<T>::value() const {
  return tape->value(*this);
}

// Differentiable primitives. All inputs must live on the same tape.
namespace ag {

template <typename T>
Var<T> pad2d(Var<T> x, std::size_t p);
template <typename T>
Var<T> unfold(Var<T> x, std::size_t k, std::size_t s);
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> transpose(Var<T> a);
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);
template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> pixel_shuffle(Var<T> x, std::size_t r);
template <typename T>
Var<T> assemble_blocks(Var<T> rows, std::size_t n, std::size_t gh, std::size_t gw,
                       std::size_t c, std::size_t b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
// Scalar [1] sum of all elements.
template <typename T>
Var<T> sum(Var<T> a);
// Scalar [1] mean of squared differences.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);

}  // namespace ag

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise a seeded random subset.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Denominator floor for the relative error.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/-eps evaluations crossed a ReLU kink.
  std::size_t skipped = 0;
};

using ScalarFn = std::function<Var<double>(Var<double>)>;

/// Central-difference check of d f / d x.
///
/// Relative error per coordinate is |a - n| / max(|a|, |n|, floor).
/// Coordinates where f(x + eps e_i) or f(x - eps e_i) changes any ReLU
/// sign pattern relative to f(x) are subgradient points and are skipped.
GradCheckResult grad_check(const ScalarFn& f, const TensorD& x, GradCheckOptions opts = {});

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cimnet
