#include "cimnet/cim_conv.hpp"

#include <charconv>
#include <numeric>

#include "cimnet/kernels.hpp"

namespace cimnet {

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (num <= 0 || den <= 0) {
    throw ConfigError("rational must be positive, got " + std::to_string(num) + "/" +
                      std::to_string(den));
  }
  const auto g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

Rational Rational::parse(std::string_view text) {
  auto parse_int = [&](std::string_view part) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size() || part.empty()) {
      throw ConfigError("malformed rational '" + std::string(text) + "'");
    }
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return Rational(parse_int(text), 1);
  return Rational(parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1)));
}

std::string Rational::str() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

std::string_view activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::size_t CimConvSpec::s_out() const {
  const auto scaled = static_cast<std::int64_t>(stride) * f_scale.num();
  if (stride == 0 || scaled % f_scale.den() != 0) {
    throw ConfigError("CIM-CONV: S * f_scale = " + std::to_string(stride) + " * " +
                      f_scale.str() + " is not a positive integer");
  }
  return static_cast<std::size_t>(scaled / f_scale.den());
}

void CimConvSpec::validate() const {
  if (stride == 0) throw ConfigError("CIM-CONV: stride must be >= 1");
  if (c_in == 0 || c_out == 0) throw ConfigError("CIM-CONV: channel counts must be >= 1");
  (void)s_out();
}

Shape cimconv_output_shape(const CimConvSpec& spec, std::size_t n, std::size_t h,
                           std::size_t w) {
  spec.validate();
  if (h % spec.stride != 0 || w % spec.stride != 0) {
    throw ConfigError("CIM-CONV: stride " + std::to_string(spec.stride) +
                      " does not divide input " + std::to_string(h) + "x" + std::to_string(w));
  }
  const auto so = spec.s_out();
  return {n, spec.c_out, (h / spec.stride) * so, (w / spec.stride) * so};
}

std::size_t cimconv_window_count(const CimConvSpec& spec, std::size_t h, std::size_t w) {
  (void)cimconv_output_shape(spec, 1, h, w);
  // With padding 1 this closed form reduces to (H/S)*(W/S) whenever S divides H, W.
  const auto k = spec.kernel();
  return kernels::window_steps(h + 2, k, spec.stride) * kernels::window_steps(w + 2, k, spec.stride);
}

namespace {

template <typename T>
void check_params(const Shape& x, const CimConvSpec& spec, const TensorT<T>& weight,
                  const TensorT<T>& bias) {
  if (x.size() != 4) throw DimensionError("cimconv: input must be rank 4, got " + shape_str(x));
  if (x[1] != spec.c_in) {
    throw DimensionError("cimconv: spec expects " + std::to_string(spec.c_in) +
                         " channels, input has " + std::to_string(x[1]));
  }
  const Shape want_w{spec.in_features(), spec.out_features()};
  if (weight.shape() != want_w || bias.shape() != Shape{spec.out_features()}) {
    throw DimensionError("cimconv: params W=" + shape_str(weight.shape()) + " b=" +
                         shape_str(bias.shape()) + " do not match spec " + shape_str(want_w));
  }
}

}  // namespace

template <typename T>
TensorT<T> cimconv_forward(const TensorT<T>& x, const CimConvSpec& spec,
                           const CimConvParamsT<T>& params, const MatmulFn<T>* mvm) {
  check_params(x.shape(), spec, params.weight, params.bias);
  const auto n = x.dim(0);
  (void)cimconv_output_shape(spec, n, x.dim(2), x.dim(3));
  const auto k = spec.kernel();
  const auto gh = x.dim(2) / spec.stride, gw = x.dim(3) / spec.stride;
  auto windows =
      kernels::unfold(kernels::pad2d(x, 1), k, spec.stride).reshaped({n * gh * gw, spec.in_features()});
  auto prod = mvm ? (*mvm)(windows, params.weight) : kernels::matmul(windows, params.weight);
  auto rows = kernels::add_row_bias(prod, params.bias);
  if (spec.activation == Activation::relu) rows = kernels::relu(rows);
  auto out = kernels::assemble_blocks(rows, n, gh, gw, spec.c_out, spec.s_out());
  check_finite(out, "cimconv");
  return out;
}

template <typename T>
Var<T> cimconv_forward(Var<T> x, const CimConvSpec& spec, Var<T> weight, Var<T> bias) {
  check_params(x.shape(), spec, weight.value(), bias.value());
  const auto n = x.shape()[0];
  (void)cimconv_output_shape(spec, n, x.shape()[2], x.shape()[3]);
  const auto gh = x.shape()[2] / spec.stride, gw = x.shape()[3] / spec.stride;
  auto windows = ag::reshape(ag::unfold(ag::pad2d(x, 1), spec.kernel(), spec.stride),
                             {n * gh * gw, spec.in_features()});
  auto rows = ag::add_row_bias(ag::matmul(windows, weight), bias);
  if (spec.activation == Activation::relu) rows = ag::relu(rows);
  return ag::assemble_blocks(rows, n, gh, gw, spec.c_out, spec.s_out());
}

template TensorT<float> cimconv_forward(const TensorT<float>&, const CimConvSpec&,
                                        const CimConvParamsT<float>&, const MatmulFn<float>*);
template TensorT<double> cimconv_forward(const TensorT<double>&, const CimConvSpec&,
                                         const CimConvParamsT<double>&, const MatmulFn<double>*);
template Var<float> cimconv_forward(Var<float>, const CimConvSpec&, Var<float>, Var<float>);
template Var<double> cimconv_forward(Var<double>, const CimConvSpec&, Var<double>, Var<double>);

}  // namespace cimnet
