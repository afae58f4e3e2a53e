#include <gtest/gtest.h>

#include <cmath>

#include "sned/diffusion/diffusion.hpp"
#include "sned/numerics/gradcheck.hpp"
#include "sned/numerics/ops.hpp"

using namespace sned;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.base_width = 8;
  c.level_multipliers = {1, 2};
  c.frames = 2;
  c.time_embed_dim = 16;
  c.cond_embed_dim = 8;
  return c;
}

Denoiser<double> zero_model() {
  return [](const Tensor<double>& x, std::span<const int>, const Tensor<double>*) { return Tensor<double>(x.shape()); };
}

}  // namespace

TEST(LinearSchedule, SingleStep) {
  const NoiseSchedule s = linear_schedule(1);
  ASSERT_EQ(s.betas.size(), 1u);
  EXPECT_DOUBLE_EQ(s.betas[0], 1e-4);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.9999);
}

TEST(LinearSchedule, StrictlyDecreasingAndPositive) {
  for (int T : {2, 100, 1000}) {
    const NoiseSchedule s = linear_schedule(T);
    EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
    EXPECT_DOUBLE_EQ(s.betas.back(), 0.02);
    for (int t = 2; t <= T; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GT(s.alpha_bar(T), 0.0);
  }
}

TEST(LinearSchedule, RejectsBadBounds) {
  EXPECT_THROW(linear_schedule(0), std::invalid_argument);
  EXPECT_THROW(linear_schedule(10, 0.1, 0.01), std::invalid_argument);
  EXPECT_THROW(linear_schedule(10, 1e-4, 1.0), std::invalid_argument);
}

TEST(QSample, Examples) {
  const Tensor<double> one(Shape{1}, 1.0), zero(Shape{1}, 0.0);
  EXPECT_EQ(q_sample(one, 1.0, zero)[0], 1.0);
  EXPECT_DOUBLE_EQ(q_sample(one, 0.25, zero)[0], 0.5);
  EXPECT_NEAR(q_sample(zero, 0.25, one)[0], 0.866025, 1e-6);
  EXPECT_THROW(q_sample(one, 0.25, Tensor<double>(Shape{2})), ShapeError);
}

TEST(QSample, InversionExactAtZeroNoise) {
  const NoiseSchedule s = linear_schedule(100);
  Rng rng(1);
  Tensor<double> x0(Shape{3, 5});
  rng.fill_normal(x0.values());
  const std::vector<int> t = {1, 50, 100};
  const Tensor<double> xt = q_sample(x0, t, Tensor<double>(x0.shape()), s);
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 5; ++i) EXPECT_EQ(xt[b * 5 + i] / std::sqrt(s.alpha_bar(t[static_cast<std::size_t>(b)])), x0[b * 5 + i]);
}

TEST(TrainingLoss, OracleAndZeroPredictors) {
  const NoiseSchedule s = linear_schedule(100);
  Tensor<double> x0(Shape{64, 2, 3, 8, 8});
  Rng data(2);
  data.fill_uniform(x0.values(), 0.0, 1.0);
  const std::vector<int> caps;
  const LossBatch<double> batch{x0, caps, nullptr};

  // an oracle recovers eps from x_t exactly given x0 and t
  const Denoiser<double> oracle = [&](const Tensor<double>& xt, std::span<const int> t, const Tensor<double>*) {
    Tensor<double> e(xt.shape());
    const std::int64_t per = xt.numel() / xt.dim(0);
    for (std::int64_t b = 0; b < xt.dim(0); ++b) {
      const double ab = s.alpha_bar(t[static_cast<std::size_t>(b)]);
      for (std::int64_t i = 0; i < per; ++i) e[b * per + i] = (xt[b * per + i] - std::sqrt(ab) * x0[b * per + i]) / std::sqrt(1 - ab);
    }
    return e;
  };
  Rng r1(3);
  EXPECT_NEAR(training_loss(oracle, batch, s, r1), 0.0, 1e-20);
  Rng r2(3);
  EXPECT_NEAR(training_loss(zero_model(), batch, s, r2), 1.0, 0.1);
}

TEST(TrainingLoss, FiniteForRandomNet) {
  const ModelConfig c = micro_config();
  const Supernet net = build_supernet(c, 1);
  Tensor<float> x0(Shape{2, 2, 3, 16, 16});
  Rng data(4);
  data.fill_uniform(x0.values(), 0.0, 1.0);
  const std::vector<int> caps(2 * static_cast<std::size_t>(c.caption_length), 1);
  Rng rng(5);
  const double loss = training_loss(net, native_spec(c, 16), LossBatch<float>{x0, caps, nullptr}, linear_schedule(100), rng);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GE(loss, 0.0);
  Rng again(5);
  EXPECT_EQ(loss, training_loss(net, native_spec(c, 16), LossBatch<float>{x0, caps, nullptr}, linear_schedule(100), again));
}

TEST(TrainingLoss, ProbeWeightGradientMatchesFiniteDifference) {
  // 32-bit, probe on one conv weight of a micro model
  ModelConfig c = micro_config();
  c.level_multipliers = {1};
  Supernet net = build_supernet(c, 8);
  Tensor<float> x0(Shape{2, 2, 3, 8, 8});
  Rng data(6);
  data.fill_uniform(x0.values(), 0.0, 1.0);
  const std::vector<int> caps(2 * static_cast<std::size_t>(c.caption_length), 2);
  const NoiseSchedule s = linear_schedule(100);
  const SubnetSpec spec = native_spec(c, 8);
  Rng r(7);
  const NoiseDraw<float> draw = draw_noise<float>(r, x0.shape(), s);
  const LossBatch<float> batch{x0, caps, nullptr};

  Tape<float> tape;
  SubnetBinding<float> bind(net, spec, true);
  const Var loss = training_loss(tape, bind, batch, draw, s);
  tape.backward(loss);
  const int layer = net.layout.index_of("down0.0.res.conv1.w");
  const Tensor<float>* g = nullptr;
  for (const auto& b : bind.bound())
    if (b.layer == layer) g = tape.grad(b.var);
  ASSERT_NE(g, nullptr);

  auto eval = [&] {
    Tape<float> t2;
    SubnetBinding<float> b2(net, spec, false);
    return static_cast<double>(t2.value(training_loss(t2, b2, batch, draw, s))[0]);
  };
  auto& w = net.weights[static_cast<std::size_t>(layer)];
  for (std::int64_t idx : {0, 17, 100, 301}) {
    const float orig = w[idx];
    const float h = 1e-2f;
    w[idx] = orig + h;
    const double up = eval();
    w[idx] = orig - h;
    const double dn = eval();
    w[idx] = orig;
    const double fd = (up - dn) / (2.0 * h);
    EXPECT_NEAR((*g)[idx], fd, 1e-3 * std::max(1.0, std::abs(fd))) << idx;
  }
}

TEST(DdimTimesteps, EvenlySpacedWithEndpoints) {
  EXPECT_EQ(ddim_timesteps(100, 5), (std::vector<int>{100, 75, 51, 26, 1}));
  EXPECT_EQ(ddim_timesteps(10, 10), (std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1}));
  EXPECT_EQ(ddim_timesteps(7, 1), (std::vector<int>{7}));
  EXPECT_THROW(ddim_timesteps(10, 11), std::invalid_argument);
}

TEST(Ddim, ZeroPredictorTelescopes) {
  const NoiseSchedule s = linear_schedule(100);
  for (int steps : {5, 20, 100}) {
    Rng rng(10);
    Tensor<double> pre;
    ddim_sample(zero_model(), Shape{2, 2, 3, 4, 4}, nullptr, s, steps, rng, 0.0, &pre);
    Rng ref(10);
    Tensor<double> xT(Shape{2, 2, 3, 4, 4});
    ref.fill_normal(xT.values());
    for (std::int64_t i = 0; i < xT.numel(); ++i) EXPECT_NEAR(pre[i], xT[i] / std::sqrt(s.alpha_bar(100)), 1e-5);
  }
}

TEST(Ddim, PerfectPredictorSingleStepRecoversX0) {
  const NoiseSchedule s = linear_schedule(1);
  Rng data(11);
  Tensor<double> x0(Shape{1, 2, 3, 4, 4});
  data.fill_uniform(x0.values(), 0.2, 0.8);
  Rng probe(12);
  Tensor<double> xT(x0.shape());
  probe.fill_normal(xT.values());
  const double ab = s.alpha_bar(1);
  // eps consistent with x_T = sqrt(ab) x0 + sqrt(1-ab) eps
  const Denoiser<double> perfect = [&](const Tensor<double>& x, std::span<const int>, const Tensor<double>*) {
    Tensor<double> e(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) e[i] = (x[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab);
    return e;
  };
  Rng rng(12);
  const Tensor<double> out = ddim_sample(perfect, x0.shape(), nullptr, s, 1, rng);
  for (std::int64_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(out[i], x0[i], 1e-5);
}

TEST(Ddim, NetworkSamplingDeterministicAndShaped) {
  const ModelConfig c = micro_config();
  const Supernet net = build_supernet(c, 3);
  const std::vector<int> caps(2 * static_cast<std::size_t>(c.caption_length), 4);
  const NoiseSchedule s = linear_schedule(50);
  Rng a(1), b(1);
  const Tensor<float> x = ddim_sample(net, native_spec(c, 16), 2, caps, s, 4, a);
  const Tensor<float> y = ddim_sample(net, native_spec(c, 16), 2, caps, s, 4, b);
  EXPECT_EQ(x, y);
  EXPECT_EQ(x.shape(), (Shape{2, 2, 3, 16, 16}));
  for (float v : x.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Cascade, RecursiveSsrDoublesResolution) {
  const ModelConfig base = micro_config();
  ModelConfig ssr = base;
  ssr.role = Role::SSR;
  const Supernet bnet = build_supernet(base, 1);
  const Supernet snet = build_supernet(ssr, 2);
  const std::vector<int> caps(static_cast<std::size_t>(base.caption_length), 3);
  const NoiseSchedule s = linear_schedule(20);
  Rng rng(4);
  const CascadeResult r = cascade_sample(bnet, snet, native_spec(base, 8), {native_spec(ssr, 16), native_spec(ssr, 32)},
                                         caps, 1, s, 3, rng);
  EXPECT_EQ(r.ssr_applications, 2);
  EXPECT_EQ(r.video.shape(), (Shape{1, 2, 3, 32, 32}));
  ASSERT_EQ(r.stages.size(), 3u);

  Rng single(4);
  const CascadeResult only = cascade_sample(bnet, snet, native_spec(base, 8), {}, caps, 1, s, 3, single);
  EXPECT_EQ(only.ssr_applications, 0);
  EXPECT_EQ(only.video, r.stages[0]);

  Rng bad(4);
  EXPECT_THROW(cascade_sample(bnet, snet, native_spec(base, 8), {native_spec(ssr, 32)}, caps, 1, s, 3, bad),
               std::invalid_argument);
}
