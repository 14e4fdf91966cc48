#pragma once

#include <cstddef>
#include <functional>

#include "cimnet/autograd.hpp"
#include "cimnet/rng.hpp"
#include "cimnet/tensor.hpp"

namespace cimnet {

template <typename T>
struct ConvParamsT {
  TensorT<T> weight;  // [C_out, C_in, k, k]
  TensorT<T> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t c_out() const { return weight.dim(0); }
  std::size_t c_in() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

template <typename T>
struct FcParamsT {
  TensorT<T> weight;  // [D_in, D_out]
  TensorT<T> bias;    // [D_out]
};

using ConvParams = ConvParamsT<float>;
using FcParams = FcParamsT<float>;

/// Product of a window matrix [windows, K] with a weight matrix [K, D].
/// The default is kernels::matmul; the crossbar simulator substitutes its
/// own tiled, quantized implementation.
template <typename T>
using MatmulFn = std::function<TensorT<T>(const TensorT<T>& windows, const TensorT<T>& weight)>;

// floor((n + 2p - k) / s) + 1
std::size_t conv_output_extent(std::size_t n, std::size_t k, std::size_t s, std::size_t p);

// [C_out, C_in, k, k] -> [C_in*k*k, C_out], matching unfold's feature order.
template <typename T>
TensorT<T> conv_weight_matrix(const TensorT<T>& weight);

/// pad2d -> unfold -> matmul -> bias -> spatial reshape.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvParamsT<T>& params,
                  const MatmulFn<T>* mvm = nullptr);
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t padding);

template <typename T>
TensorT<T> fc(const TensorT<T>& x, const FcParamsT<T>& params);
template <typename T>
Var<T> fc(Var<T> x, Var<T> weight, Var<T> bias);

template <typename T>
TensorT<T> add_skip(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
Var<T> add_skip(Var<T> a, Var<T> b);

// Uniform(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
Tensor kaiming_uniform(Rng& rng, const Shape& shape, std::size_t fan_in);

}  // namespace cimnet
