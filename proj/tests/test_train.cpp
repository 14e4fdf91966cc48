#include <gtest/gtest.h>

#include <cmath>

#include "cimnet/error.hpp"
#include "cimnet/train.hpp"

using namespace cimnet;

namespace {

PresetOptions tiny() {
  PresetOptions o;
  o.widths = {8, 16, 32};
  return o;
}

ModelGraph identity_graph(std::size_t h, std::size_t w) {
  return ModelGraph::build({"identity", 3, h, w, {conv_layer("id", "", 1, 1, 0, 3)}});
}

ParamStore identity_params() {
  Tensor wt({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) wt.at(c, c, 0, 0) = 1.0f;
  return {{"id.weight", wt}, {"id.bias", Tensor({3})}};
}

TrainConfig smoke_config(std::size_t patch, std::size_t steps, double lr) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 8;
  cfg.patch = patch;
  cfg.sigma_min = cfg.sigma_max = 15.0;
  cfg.seed = 5;
  cfg.schedule = LrSchedule::constant(lr);
  cfg.steps_per_epoch = steps;
  return cfg;
}

}  // namespace

TEST(Awgn, ZeroSigmaIsIdentity) {
  Rng rng(1, "n");
  const Tensor x({1, 3, 4, 4}, 0.3f);
  EXPECT_EQ(add_awgn(x, 0.0, rng), x);
  EXPECT_THROW(add_awgn(x, -1.0, rng), ConfigError);
}

TEST(Awgn, PsnrMatchesClosedForm) {
  const TensorD clean({1, 3, 96, 96}, 0.5);
  for (double sigma : {5.0, 15.0, 25.0, 50.0}) {
    Rng rng(7, "awgn");
    const double measured = psnr(add_awgn(clean, sigma, rng), clean);
    const double expected = 20.0 * std::log10(255.0 / sigma);
    EXPECT_NEAR(measured, expected, 0.1) << "sigma " << sigma;
    if (sigma == 15.0) {
      EXPECT_NEAR(measured, 24.61, 0.05);
    }
    if (sigma == 50.0) {
      EXPECT_NEAR(measured, 14.15, 0.1);
    }
  }
}

TEST(Awgn, NotClipped) {
  Rng rng(2, "n");
  const auto y = add_awgn(Tensor({1, 1, 32, 32}, 0.0f), 50.0, rng);
  EXPECT_LT(*std::min_element(y.data().begin(), y.data().end()), 0.0f);
}

TEST(Mse, CasesAndLoopOracle) {
  Rng rng(3, "m");
  const auto a = seeded_uniform<double>(rng, {2, 3, 5, 5}, 0, 1);
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mse(TensorD({10}, 0.75), TensorD({10}, 0.5)), 0.0625);
  const auto b = seeded_uniform<double>(rng, {2, 3, 5, 5}, 0, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(mse(a, b), acc / a.size(), 1e-15);
  EXPECT_THROW(mse(a, TensorD({3})), DimensionError);
}

TEST(Psnr, CasesAndSymmetry) {
  Rng rng(4, "p");
  const auto a = seeded_uniform<double>(rng, {1, 3, 8, 8}, 0, 1);
  const auto b = seeded_uniform<double>(rng, {1, 3, 8, 8}, 0, 1);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_EQ(format_psnr(psnr(a, a)), "inf");
  EXPECT_NEAR(psnr(TensorD({16}, 0.5), TensorD({16}, 0.4)), 20.0, 1e-9);
  EXPECT_EQ(format_psnr(psnr(TensorD({16}, 0.5), TensorD({16}, 0.4))), "20.00");
  EXPECT_EQ(psnr(a, b), psnr(b, a));
}

TEST(Adam, ZeroGradientLeavesParams) {
  ParamStoreT<double> p{{"w", TensorD({3}, {1.0, -2.0, 0.5})}};
  const auto before = p;
  AdamStateT<double> st;
  adam_step(p, {{"w", TensorD({3})}}, st, 1e-3);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstTwoStepsClosedForm) {
  ParamStoreT<double> p{{"w", TensorD({1}, 0.0)}};
  const ParamStoreT<double> g{{"w", TensorD({1}, 1.0)}};
  AdamStateT<double> st;
  // Bias correction makes m_hat = v_hat = 1 for a constant unit gradient.
  adam_step(p, g, st, 1e-3);
  EXPECT_NEAR(p.at("w")[0], -1e-3 / (1.0 + 1e-8), 1e-12);
  adam_step(p, g, st, 1e-3);
  EXPECT_NEAR(p.at("w")[0], -2e-3 / (1.0 + 1e-8), 1e-12);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, ThirdStepWithChangingGradient) {
  ParamStoreT<double> p{{"w", TensorD({1}, 0.0)}};
  AdamStateT<double> st;
  const double grads[] = {1.0, -0.5, 2.0};
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 3; ++t) {
    const double gt = grads[t - 1];
    adam_step(p, {{"w", TensorD({1}, gt)}}, st, 0.01);
    m = 0.9 * m + 0.1 * gt;
    v = 0.999 * v + 0.001 * gt * gt;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.at("w")[0], x, 1e-12);
  }
}

TEST(Adam, MissingGradientThrows) {
  ParamStoreT<double> p{{"w", TensorD({1})}};
  AdamStateT<double> st;
  EXPECT_THROW(adam_step(p, {}, st, 1e-3), DimensionError);
}

TEST(LrSchedule, StandardPieces) {
  const auto s = LrSchedule::standard();
  EXPECT_EQ(lr_at_epoch(s, 0, 100), 1e-3);
  EXPECT_EQ(lr_at_epoch(s, 49, 100), 1e-3);
  EXPECT_EQ(lr_at_epoch(s, 50, 100), 1e-4);
  EXPECT_EQ(lr_at_epoch(s, 55, 100), 1e-4);
  EXPECT_EQ(lr_at_epoch(s, 60, 100), 1e-6);
  EXPECT_EQ(lr_at_epoch(s, 99, 100), 1e-6);
  EXPECT_THROW(lr_at_epoch(s, 100, 100), ConfigError);
  EXPECT_THROW((LrSchedule{{{1, 1e-3}}}.validate()), ConfigError);
  EXPECT_THROW((LrSchedule{{{0, 1e-3}, {0, 1e-4}}}.validate()), ConfigError);
}

TEST(MetricsCsv, Format) {
  std::vector<MetricRow> rows(2);
  rows[0] = {0, 0, 1e-3, 0.5, std::nullopt};
  rows[1] = {0, 1, 1e-3, 0.25, 27.5};
  EXPECT_EQ(metrics_csv(rows), "epoch,step,lr,loss,val_psnr\n0,0,0.001,0.5,\n0,1,0.001,0.25,27.500000\n");
}

TEST(SyntheticTextures, RangeAndDeterminism) {
  const auto a = synthetic_textures(4, 3, 16, 16, 1);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a, synthetic_textures(4, 3, 16, 16, 1));
  EXPECT_NE(a, synthetic_textures(4, 3, 16, 16, 2));
  for (const auto& t : a) {
    EXPECT_EQ(t.shape(), (Shape{1, 3, 16, 16}));
    for (float v : t.data()) {
      EXPECT_GE(v, 0.1f - 1e-6f);
      EXPECT_LE(v, 0.9f + 1e-6f);
    }
  }
}

TEST(Evaluate, IdentityGraphReproducesNoisyPsnr) {
  const auto g = identity_graph(32, 32);
  const std::vector<Tensor> clean(3, Tensor({1, 3, 32, 32}, 0.5f));
  const auto r = evaluate(g, identity_params(), clean, 15.0, 9);
  EXPECT_DOUBLE_EQ(r.denoised_psnr, r.noisy_psnr);
  EXPECT_NEAR(r.noisy_psnr, 24.61, 0.15);
  const auto again = evaluate(g, identity_params(), clean, 15.0, 9);
  EXPECT_EQ(again.noisy_psnr, r.noisy_psnr);
  EXPECT_EQ(again.denoised_psnr, r.denoised_psnr);
}

TEST(Evaluate, ZeroOutputIsFinite) {
  const auto g = identity_graph(16, 16);
  const std::vector<Tensor> clean(2, Tensor({1, 3, 16, 16}, 0.5f));
  const auto r = evaluate(g, zero_params(g), clean, 15.0, 1);
  EXPECT_TRUE(std::isfinite(r.denoised_psnr));
  EXPECT_NEAR(r.denoised_psnr, -10.0 * std::log10(0.25), 1e-6);
}

TEST(Train, ZeroLearningRateLeavesParamsBitIdentical) {
  const auto g = build_cim_net(2, 16, 16, tiny());
  const auto p0 = init_params(g, 1);
  Dataset d;
  d.train = synthetic_textures(8, 3, 16, 16, 2);
  const auto r = train(g, p0, d, smoke_config(16, 5, 0.0));
  EXPECT_EQ(r.params, p0);
  EXPECT_EQ(r.log.size(), 5u);
}

TEST(Train, SameSeedSameRun) {
  const auto g = build_cim_net(2, 16, 16, tiny());
  Dataset d;
  d.train = synthetic_textures(12, 3, 16, 16, 2);
  d.val = synthetic_textures(2, 3, 16, 16, 3);
  auto cfg = smoke_config(16, 3, 1e-3);
  cfg.epochs = 2;
  const auto a = train(g, init_params(g, 1), d, cfg);
  const auto b = train(g, init_params(g, 1), d, cfg);
  EXPECT_EQ(metrics_csv(a.log), metrics_csv(b.log));
  EXPECT_EQ(a.params, b.params);
  ASSERT_TRUE(a.log.back().val_psnr.has_value());
  cfg.seed = 6;
  EXPECT_NE(metrics_csv(train(g, init_params(g, 1), d, cfg).log), metrics_csv(a.log));
}

TEST(Train, RejectsMismatchedPatches) {
  const auto g = build_cim_net(2, 16, 16, tiny());
  Dataset d;
  d.train = synthetic_textures(2, 3, 32, 32, 2);
  EXPECT_THROW(train(g, init_params(g, 1), d, smoke_config(16, 1, 1e-3)), ConfigError);
  EXPECT_THROW(train(g, init_params(g, 1), Dataset{}, smoke_config(16, 1, 1e-3)), ConfigError);
}

// Eight fixed patches, 200 steps at lr 1e-3.
TEST(Train, OverfitSmoke) {
  const auto g = build_cim_net(2, 16, 16, tiny());
  Dataset d;
  d.train = synthetic_textures(8, 3, 16, 16, 4);
  const auto r = train(g, init_params(g, 2), d, smoke_config(16, 200, 1e-3));
  ASSERT_EQ(r.log.size(), 200u);
  const double first = r.log.front().loss, last = r.log.back().loss;
  EXPECT_LE(last, 0.1 * first) << first << " -> " << last;
  // Mean loss over consecutive 50-step windows never rises by more than 5%.
  for (std::size_t w = 50; w + 50 <= r.log.size(); w += 50) {
    double prev = 0, cur = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      prev += r.log[w - 50 + i].loss;
      cur += r.log[w + i].loss;
    }
    EXPECT_LE(cur, 1.05 * prev) << "window at step " << w;
  }
}

TEST(NoiseMap, AppendsConstantChannel) {
  Rng rng(1, "x");
  const auto x = seeded_uniform<float>(rng, {2, 3, 4, 5}, 0, 1);
  const auto y = append_noise_map(x, {0.1, 0.2});
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 5}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(y.at(n, ch, r, c), x.at(n, ch, r, c));
        EXPECT_EQ(y.at(n, 3, r, c), n == 0 ? 0.1f : 0.2f);
      }
  EXPECT_THROW(append_noise_map(x, {0.1}), DimensionError);
}

TEST(NoiseMap, SelectedByChannelCount) {
  PresetOptions o = tiny();
  o.noise_map = true;
  const auto g = build_cim_net(2, 16, 16, o);
  EXPECT_EQ(g.config().channels, 4u);
  EXPECT_EQ(g.output_shape(), (Shape{3, 16, 16}));
  EXPECT_TRUE(uses_noise_map(g, 3));
  EXPECT_FALSE(uses_noise_map(build_cim_net(2, 16, 16, tiny()), 3));
  EXPECT_THROW(uses_noise_map(g, 1), ConfigError);
}

TEST(NoiseMap, TrainAndEvaluate) {
  PresetOptions o = tiny();
  o.noise_map = true;
  const auto g = build_cim_net(2, 16, 16, o);
  Dataset d;
  d.train = synthetic_textures(8, 3, 16, 16, 2);
  d.val = synthetic_textures(2, 3, 16, 16, 3);
  auto cfg = smoke_config(16, 4, 1e-3);
  cfg.sigma_min = 5;
  cfg.sigma_max = 50;
  const auto r = train(g, init_params(g, 1), d, cfg);
  EXPECT_EQ(r.log.size(), 4u);
  EXPECT_TRUE(std::isfinite(*r.log.back().val_psnr));
  // The map carries the level: a different evaluation sigma changes the model input.
  const auto p = init_params(g, 1);
  Tensor x({1, 3, 16, 16}, 0.5f);
  EXPECT_NE(graph_forward(g, p, append_noise_map(x, {0.02})), graph_forward(g, p, append_noise_map(x, {0.2})));
}
