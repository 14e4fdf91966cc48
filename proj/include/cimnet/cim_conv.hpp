#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "cimnet/autograd.hpp"
#include "cimnet/nn.hpp"
#include "cimnet/tensor.hpp"

namespace cimnet {

/// Exact positive rational, always stored in lowest terms.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1);

  // Accepts "n" or "n/d".
  static Rational parse(std::string_view text);

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }
  std::string str() const;
  double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

  bool operator==(const Rational&) const = default;

 private:
  std::int64_t num_ = 1;
  std::int64_t den_ = 1;
};

enum class Activation { relu, identity };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

/// One CIM-CONV layer.
///
/// Each (k x k) window of the 1-padded input, taken with stride S, is mapped
/// by one shared fully-connected layer to a [c_out, S_out, S_out] block,
/// S_out = S * f_scale. Blocks tile the output without overlap, so the
/// output is f_scale times the input size.
struct CimConvSpec {
  std::size_t stride = 1;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  Rational f_scale{1};
  Activation activation = Activation::relu;

  // S + 1, except 3 at S = 1.
  std::size_t kernel() const noexcept { return stride == 1 ? 3 : stride + 1; }
  // S * f_scale; throws ConfigError when not a positive integer.
  std::size_t s_out() const;
  std::size_t in_features() const noexcept { return c_in * kernel() * kernel(); }
  std::size_t out_features() const { return c_out * s_out() * s_out(); }

  // Throws ConfigError on an invalid combination.
  void validate() const;
};

template <typename T>
struct CimConvParamsT {
  TensorT<T> weight;  // [c_in*k*k, c_out*S_out*S_out]
  TensorT<T> bias;    // [c_out*S_out*S_out]
};

using CimConvParams = CimConvParamsT<float>;

// {N, c_out, (H/S)*S_out, (W/S)*S_out}; ConfigError unless S divides H and W.
Shape cimconv_output_shape(const CimConvSpec& spec, std::size_t n, std::size_t h, std::size_t w);

// Number of windows, (H/S)*(W/S). One MVM each on an array that fits the layer.
std::size_t cimconv_window_count(const CimConvSpec& spec, std::size_t h, std::size_t w);

template <typename T>
TensorT<T> cimconv_forward(const TensorT<T>& x, const CimConvSpec& spec,
                           const CimConvParamsT<T>& params, const MatmulFn<T>* mvm = nullptr);

template <typename T>
Var<T> cimconv_forward(Var<T> x, const CimConvSpec& spec, Var<T> weight, Var<T> bias);

}  // namespace cimnet
