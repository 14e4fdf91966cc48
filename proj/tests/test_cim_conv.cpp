#include <gtest/gtest.h>

#include <cmath>

#include "cimnet/cim_conv.hpp"
#include "cimnet/error.hpp"
#include "cimnet/kernels.hpp"
#include "oracles.hpp"

using namespace cimnet;

namespace {

TensorD random_d(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed, "cim");
  return seeded_normal<double>(rng, shape, 0.0, 1.0);
}

CimConvSpec spec_of(std::size_t s, std::size_t cin, std::size_t cout, Rational f,
                    Activation a = Activation::relu) {
  CimConvSpec spec{s, cin, cout, f, a};
  spec.validate();
  return spec;
}

CimConvParamsT<double> random_params(const CimConvSpec& spec, std::uint64_t seed) {
  return {random_d({spec.in_features(), spec.out_features()}, seed),
          random_d({spec.out_features()}, seed + 1)};
}

}  // namespace

TEST(Rational, ParseAndNormalise) {
  EXPECT_EQ(Rational::parse("1/2"), Rational(1, 2));
  EXPECT_EQ(Rational::parse("2/4"), Rational(1, 2));
  EXPECT_EQ(Rational::parse("3"), Rational(3));
  EXPECT_EQ(Rational(4, 2).str(), "2");
  EXPECT_EQ(Rational(1, 2).str(), "1/2");
  for (const char* bad : {"", "0", "-1/2", "1/0", "a/2", "1/2/3", "1.5"}) {
    EXPECT_THROW(Rational::parse(bad), ConfigError) << bad;
  }
}

TEST(CimConvSpec, KernelAndOutputSize) {
  EXPECT_EQ(spec_of(1, 3, 8, 1).kernel(), 3u);
  EXPECT_EQ(spec_of(2, 3, 8, 1).kernel(), 3u);
  EXPECT_EQ(spec_of(4, 3, 8, 1).kernel(), 5u);
  EXPECT_EQ(spec_of(8, 3, 8, 1).kernel(), 9u);
  EXPECT_EQ(spec_of(8, 3, 8, Rational(1, 2)).s_out(), 4u);
  CimConvSpec odd{1, 3, 8, Rational(1, 2), Activation::relu};
  EXPECT_THROW(odd.validate(), ConfigError);
}

TEST(CimConvShape, Examples) {
  EXPECT_EQ(cimconv_output_shape(spec_of(8, 3, 32, 1), 1, 96, 96), (Shape{1, 32, 96, 96}));
  EXPECT_EQ(cimconv_output_shape(spec_of(8, 3, 32, Rational(1, 2)), 1, 96, 96),
            (Shape{1, 32, 48, 48}));
  EXPECT_EQ(cimconv_output_shape(spec_of(2, 3, 32, 2), 1, 24, 24), (Shape{1, 32, 48, 48}));
  EXPECT_THROW(cimconv_output_shape(spec_of(8, 3, 32, 1), 1, 100, 96), ConfigError);
}

TEST(CimConvShape, ScaleTheoremSweep) {
  for (std::size_t s : {1u, 2u, 4u, 8u})
    for (Rational f : {Rational(1, 2), Rational(1), Rational(2)}) {
      CimConvSpec spec{s, 2, 3, f, Activation::relu};
      if (s * f.num() % f.den() != 0) {
        EXPECT_THROW(spec.validate(), ConfigError);
        continue;
      }
      spec.validate();
      for (std::size_t m : {1u, 2u, 3u}) {
        const std::size_t h = s * m, w = s * (m + 1);
        const auto shape = cimconv_output_shape(spec, 1, h, w);
        EXPECT_EQ(shape[2] * f.den(), h * f.num());
        EXPECT_EQ(shape[3] * f.den(), w * f.num());
        const auto x = random_d({1, 2, h, w}, s * 10 + m);
        EXPECT_EQ(cimconv_forward(x, spec, random_params(spec, 7)).shape(), shape);
      }
    }
}

TEST(CimConvWindows, ClosedForms) {
  EXPECT_EQ(cimconv_window_count(spec_of(8, 3, 4, 1), 96, 96), 144u);
  EXPECT_EQ(cimconv_window_count(spec_of(1, 3, 4, 1), 96, 96), 9216u);
  EXPECT_EQ(cimconv_window_count(spec_of(8, 3, 4, 1), 24, 24), 9u);
  for (std::size_t s : {1u, 2u, 4u, 8u}) {
    const auto spec = spec_of(s, 1, 1, 1);
    const std::size_t h = 16 * s / std::min<std::size_t>(s, 4), w = 2 * h;
    const std::size_t l = kernels::unfold(kernels::pad2d(TensorD({1, 1, h, w}), 1), spec.kernel(), s).dim(1);
    EXPECT_EQ(cimconv_window_count(spec, h, w), l);
    EXPECT_EQ(l, (h / s) * (w / s));
  }
}

TEST(CimConvForward, MatchesPatchLoopExample) {
  const auto spec = spec_of(4, 3, 2, 1);
  const auto x = random_d({1, 3, 16, 16}, 1);
  const auto p = random_params(spec, 2);
  EXPECT_LE(oracle::max_rel_diff(cimconv_forward(x, spec, p), oracle::cimconv(x, spec, p.weight, p.bias)), 1e-5);
}

TEST(CimConvForward, MatchesPatchLoopAllSmallShapes) {
  std::size_t count = 0;
  for (std::size_t s : {1u, 2u, 4u})
    for (std::size_t h = s; h <= 16; h += s)
      for (std::size_t w = s; w <= 16; w += s)
        for (Rational f : {Rational(1), Rational(2)}) {
          auto act = (h + w) % 2 ? Activation::relu : Activation::identity;
          const auto spec = spec_of(s, 2, 2, f, act);
          const auto x = random_d({1, 2, h, w}, h * 100 + w);
          const auto p = random_params(spec, s + h);
          ASSERT_LE(oracle::max_rel_diff(cimconv_forward(x, spec, p),
                                         oracle::cimconv(x, spec, p.weight, p.bias)),
                    1e-12)
              << "S=" << s << " " << h << "x" << w << " F=" << f.str();
          ++count;
        }
  EXPECT_GT(count, 200u);
}

TEST(CimConvForward, SinglePatchIsPlainFc) {
  const std::size_t s = 4;
  const auto spec = spec_of(s, 2, 3, Rational(1, 4), Activation::identity);
  const auto x = random_d({1, 2, 4, 4}, 3);
  const auto p = random_params(spec, 4);
  // Window 0 of the padded 6x6 image covers rows/cols 0..4; F = 1/S gives a 1x1 block.
  const auto window = kernels::unfold(kernels::pad2d(x, 1), spec.kernel(), s);
  ASSERT_EQ(window.dim(1), 1u);
  const auto ref = oracle::fc(window.reshaped({1, spec.in_features()}), p.weight, p.bias);
  const auto y = cimconv_forward(x, spec, p);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 1, 1}));
  EXPECT_LE(oracle::max_rel_diff(y.reshaped({1, 3}), ref), 1e-12);
}

TEST(CimConvForward, ZeroInputGivesBiasBlocks) {
  const auto spec = spec_of(4, 2, 2, 1, Activation::identity);
  const auto p = random_params(spec, 5);
  const auto y = cimconv_forward(TensorD({1, 2, 12, 8}), spec, p);
  const std::size_t so = spec.s_out();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        EXPECT_EQ(y.at(0, c, i, j), p.bias[c * so * so + (i % so) * so + j % so]);
}

TEST(CimConvForward, NoSeamForConstantInputAndWeights) {
  // Constant input and weights, zero bias: every block is the same constant,
  // so adjacent pixels across block boundaries agree. Border windows see
  // zero padding and are excluded.
  const auto spec = spec_of(4, 2, 1, 1, Activation::identity);
  const CimConvParamsT<double> p{TensorD({spec.in_features(), spec.out_features()}, 0.25),
                                 TensorD({spec.out_features()})};
  const auto y = cimconv_forward(TensorD({1, 2, 16, 16}, 0.5), spec, p);
  const double interior = y.at(0, 0, 4, 4);
  for (std::size_t i = 4; i < 12; ++i)
    for (std::size_t j = 4; j < 12; ++j) EXPECT_EQ(y.at(0, 0, i, j), interior);
  EXPECT_EQ(y.at(0, 0, 7, 7) - y.at(0, 0, 8, 8), 0.0);

  // With a position-dependent bias the only discontinuity is the bias pattern.
  auto pb = p;
  pb.bias = random_d({spec.out_features()}, 6);
  const auto yb = cimconv_forward(TensorD({1, 2, 16, 16}, 0.5), spec, pb);
  for (std::size_t i = 4; i < 12; ++i)
    for (std::size_t j = 4; j < 12; ++j)
      EXPECT_NEAR(yb.at(0, 0, i, j) - pb.bias[(i % 4) * 4 + j % 4], interior, 1e-12);
}

TEST(CimConvForward, GradientsAgainstFiniteDifferences) {
  for (std::size_t s : {1u, 2u}) {
    const auto spec = spec_of(s, 2, 2, s == 1 ? Rational(1) : Rational(1, 2));
    const auto x = random_d({1, 2, 4, 4}, 7);
    const auto p = random_params(spec, 8);
    auto loss = [](Var<double> y) { return ag::sum(ag::mul(y, y)); };
    EXPECT_LE(grad_check([&](Var<double> v) { auto& t = *v.tape; return loss(cimconv_forward(v, spec, t.constant(p.weight), t.constant(p.bias))); }, x).max_rel_error, 1e-4);
    EXPECT_LE(grad_check([&](Var<double> v) { auto& t = *v.tape; return loss(cimconv_forward(t.constant(x), spec, v, t.constant(p.bias))); }, p.weight, {.max_coords = 60}).max_rel_error, 1e-4);
    EXPECT_LE(grad_check([&](Var<double> v) { auto& t = *v.tape; return loss(cimconv_forward(t.constant(x), spec, t.constant(p.weight), v)); }, p.bias).max_rel_error, 1e-4);
  }
}
