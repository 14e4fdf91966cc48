#include "cimnet/nn.hpp"

#include <cmath>
#include <string>

#include "cimnet/kernels.hpp"

namespace cimnet {

std::size_t conv_output_extent(std::size_t n, std::size_t k, std::size_t s, std::size_t p) {
  return kernels::window_steps(n + 2 * p, k, s);
}

template <typename T>
TensorT<T> conv_weight_matrix(const TensorT<T>& weight) {
  require_rank(weight, 4, "conv weight");
  const auto c_out = weight.dim(0);
  return kernels::transpose2d(weight.reshaped({c_out, weight.size() / c_out}));
}

namespace {

template <typename T>
void check_conv(const Shape& x, const TensorT<T>& weight, const TensorT<T>& bias) {
  if (x.size() != 4) throw DimensionError("conv2d: input must be rank 4, got " + shape_str(x));
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d: weight must be [C_out, C_in, k, k], got " +
                         shape_str(weight.shape()));
  }
  if (weight.dim(1) != x[1]) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(x[1]));
  }
  if (bias.shape() != Shape{weight.dim(0)}) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match C_out=" + std::to_string(weight.dim(0)));
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvParamsT<T>& params, const MatmulFn<T>* mvm) {
  check_conv(x.shape(), params.weight, params.bias);
  const auto n = x.dim(0);
  const auto k = params.kernel();
  const auto ho = conv_output_extent(x.dim(2), k, params.stride, params.padding);
  const auto wo = conv_output_extent(x.dim(3), k, params.stride, params.padding);
  auto cols = kernels::unfold(kernels::pad2d(x, params.padding), k, params.stride);
  const auto feat = cols.dim(2);
  auto windows = std::move(cols).reshaped({n * ho * wo, feat});
  const auto wmat = conv_weight_matrix(params.weight);
  auto prod = mvm ? (*mvm)(windows, wmat) : kernels::matmul(windows, wmat);
  auto rows = kernels::add_row_bias(prod, params.bias);
  auto out = kernels::assemble_blocks(rows, n, ho, wo, params.c_out(), 1);
  check_finite(out, "conv2d");
  return out;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t padding) {
  check_conv(x.shape(), weight.value(), bias.value());
  const auto n = x.shape()[0];
  const auto c_out = weight.shape()[0];
  const auto k = weight.shape()[2];
  const auto ho = conv_output_extent(x.shape()[2], k, stride, padding);
  const auto wo = conv_output_extent(x.shape()[3], k, stride, padding);
  auto cols = ag::unfold(ag::pad2d(x, padding), k, stride);
  const auto feat = cols.shape()[2];
  auto windows = ag::reshape(cols, {n * ho * wo, feat});
  auto wmat = ag::transpose(ag::reshape(weight, {c_out, feat}));
  auto rows = ag::add_row_bias(ag::matmul(windows, wmat), bias);
  return ag::assemble_blocks(rows, n, ho, wo, c_out, 1);
}

namespace {

template <typename T>
void check_fc(const Shape& x, const TensorT<T>& weight, const TensorT<T>& bias) {
  if (x.size() != 2 || weight.rank() != 2 || x[1] != weight.dim(0) ||
      bias.shape() != Shape{weight.dim(1)}) {
    throw DimensionError("fc: shape mismatch x=" + shape_str(x) + " W=" +
                         shape_str(weight.shape()) + " b=" + shape_str(bias.shape()));
  }
}

}  // namespace

template <typename T>
TensorT<T> fc(const TensorT<T>& x, const FcParamsT<T>& params) {
  check_fc(x.shape(), params.weight, params.bias);
  auto out = kernels::add_row_bias(kernels::matmul(x, params.weight), params.bias);
  check_finite(out, "fc");
  return out;
}

template <typename T>
Var<T> fc(Var<T> x, Var<T> weight, Var<T> bias) {
  check_fc(x.shape(), weight.value(), bias.value());
  return ag::add_row_bias(ag::matmul(x, weight), bias);
}

template <typename T>
TensorT<T> add_skip(const TensorT<T>& a, const TensorT<T>& b) {
  auto out = kernels::add(a, b);
  check_finite(out, "add_skip");
  return out;
}

template <typename T>
Var<T> add_skip(Var<T> a, Var<T> b) {
  return ag::add(a, b);
}

Tensor kaiming_uniform(Rng& rng, const Shape& shape, std::size_t fan_in) {
  if (fan_in == 0) throw ConfigError("kaiming_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return seeded_uniform<float>(rng, shape, -bound, bound);
}

#define CIMNET_INSTANTIATE(T)                                                                \
  template TensorT<T> conv_weight_matrix(const TensorT<T>&);                                 \
  template TensorT<T> conv2d(const TensorT<T>&, const ConvParamsT<T>&, const MatmulFn<T>*); \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                  \
  template TensorT<T> fc(const TensorT<T>&, const FcParamsT<T>&);                            \
  template Var<T> fc(Var<T>, Var<T>, Var<T>);                                                \
  template TensorT<T> add_skip(const TensorT<T>&, const TensorT<T>&);                        \
  template Var<T> add_skip(Var<T>, Var<T>);

CIMNET_INSTANTIATE(float)
CIMNET_INSTANTIATE(double)

#undef CIMNET_INSTANTIATE

}  // namespace cimnet
