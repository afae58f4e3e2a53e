#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "sned/numerics/gradcheck.hpp"
#include "sned/numerics/kernels.hpp"
#include "sned/numerics/linalg.hpp"
#include "sned/numerics/ops.hpp"
#include "sned/numerics/resize.hpp"
#include "sned/numerics/rng.hpp"

using namespace sned;

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape s, double stddev = 1.0) {
  Tensor<T> t(std::move(s));
  rng.fill_normal(t.values(), stddev);
  return t;
}

// sum(c * y) with fixed random c, so every output element influences the loss.
Var weighted_sum(Tape<double>& tape, Var y, std::uint64_t seed) {
  Rng rng(seed);
  auto c = random_tensor<double>(rng, tape.value(y).shape());
  return ops::sum(tape, ops::mul(tape, y, tape.constant(c)));
}

}  // namespace

TEST(Conv2d, PointwiseIdentityReturnsInput) {
  Rng rng(1);
  Tape<float> tape;
  auto x = random_tensor<float>(rng, {2, 3, 4, 5});
  Tensor<float> w({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0f;
  const Var y = ops::conv2d(tape, tape.constant(x), tape.constant(w), tape.constant(Tensor<float>({3})), 1, 0);
  EXPECT_EQ(tape.value(y), x);
}

TEST(Conv2d, AveragingKernelKeepsConstantInterior) {
  Tape<float> tape;
  Tensor<float> x({1, 1, 6, 6}, 2.5f);
  Tensor<float> w({1, 1, 3, 3}, 1.0f / 9.0f);
  const Var y = ops::conv2d(tape, tape.constant(x), tape.constant(w), Var{}, 1, 1);
  const auto& out = tape.value(y);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 6, 6}));
  for (int i = 1; i < 5; ++i)
    for (int j = 1; j < 5; ++j) EXPECT_NEAR(out[i * 6 + j], 2.5f, 1e-6);
}

TEST(Conv2d, DirectSummationCase) {
  Tape<float> tape;
  Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<float> w({1, 1, 1, 1}, {2});
  Tensor<float> b({1}, {0.5f});
  const Var y = ops::conv2d(tape, tape.constant(x), tape.constant(w), tape.constant(b), 1, 0);
  EXPECT_EQ(tape.value(y).storage(), (std::vector<float>{2.5f, 4.5f, 6.5f, 8.5f}));
}

TEST(Conv2d, OutputSizeFollowsStrideAndPadding) {
  Tape<float> tape;
  const Var y = ops::conv2d(tape, tape.constant(Tensor<float>({1, 2, 8, 8})), tape.constant(Tensor<float>({3, 2, 3, 3})),
                            Var{}, 2, 1);
  EXPECT_EQ(tape.value(y).shape(), (Shape{1, 3, 4, 4}));
}

TEST(Conv2d, ChannelMismatchNamesDimension) {
  Tape<float> tape;
  try {
    ops::conv2d(tape, tape.constant(Tensor<float>({1, 2, 4, 4})), tape.constant(Tensor<float>({3, 5, 3, 3})), Var{}, 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dim 1"), std::string::npos) << e.what();
  }
}

TEST(Linear, IdentityZeroAndHandProduct) {
  Tape<float> tape;
  Tensor<float> x({1, 2}, {1, 2});
  const Var y = ops::linear(tape, tape.constant(x), tape.constant(Tensor<float>({2, 2}, {1, 1, 1, -1})),
                            tape.constant(Tensor<float>({2})));
  EXPECT_EQ(tape.value(y).storage(), (std::vector<float>{3, -1}));

  Rng rng(3);
  auto xs = random_tensor<float>(rng, {2, 3, 4});
  const Var id = ops::linear(tape, tape.constant(xs), tape.constant(Tensor<float>({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1})), Var{});
  EXPECT_EQ(tape.value(id), xs);

  const Var z = ops::linear(tape, tape.constant(xs), tape.constant(Tensor<float>({2, 4})),
                            tape.constant(Tensor<float>({2}, {0.25f, -3.0f})));
  const auto& zv = tape.value(z);
  for (std::int64_t r = 0; r < 6; ++r) {
    EXPECT_EQ(zv[r * 2], 0.25f);
    EXPECT_EQ(zv[r * 2 + 1], -3.0f);
  }
}

TEST(Linear, RejectsMismatchedTrailingDim) {
  Tape<float> tape;
  EXPECT_THROW(ops::linear(tape, tape.constant(Tensor<float>({2, 3})), tape.constant(Tensor<float>({4, 5})), Var{}),
               ShapeError);
}

TEST(GroupNorm, ConstantInputGivesBeta) {
  Tape<float> tape;
  Tensor<float> beta({4}, {0.1f, 0.2f, 0.3f, 0.4f});
  const Var y = ops::group_norm(tape, tape.constant(Tensor<float>({2, 4, 3, 3}, 7.0f)), 2,
                                tape.constant(Tensor<float>({4}, 1.5f)), tape.constant(beta));
  const auto& v = tape.value(y);
  for (std::int64_t i = 0; i < v.numel(); ++i) EXPECT_FLOAT_EQ(v[i], beta[(i / 9) % 4]);
}

TEST(GroupNorm, UnitAffineNormalizesEachGroup) {
  Rng rng(5);
  Tape<double> tape;
  auto x = random_tensor<double>(rng, {3, 6, 4, 4}, 3.0);
  const Var y = ops::group_norm(tape, tape.constant(x), 3, tape.constant(Tensor<double>({6}, 1.0)),
                                tape.constant(Tensor<double>({6})));
  const auto& v = tape.value(y);
  for (int n = 0; n < 3; ++n)
    for (int g = 0; g < 3; ++g) {
      double s = 0, s2 = 0;
      for (int i = 0; i < 32; ++i) {
        const double e = v[(n * 6 + g * 2) * 16 + i];
        s += e;
        s2 += e * e;
      }
      EXPECT_NEAR(s / 32, 0.0, 1e-5);
      EXPECT_NEAR(s2 / 32 - (s / 32) * (s / 32), 1.0, 1e-3);
    }
}

TEST(GroupNorm, TwoChannelClosedForm) {
  Tape<double> tape;
  const double eps = 1e-3;
  const Var y = ops::group_norm(tape, tape.constant(Tensor<double>({1, 2, 1, 1}, {1.0, 3.0})), 1,
                                tape.constant(Tensor<double>({2}, 1.0)), tape.constant(Tensor<double>({2})), eps);
  const double expect = 1.0 / std::sqrt(1.0 + eps);
  EXPECT_NEAR(tape.value(y)[0], -expect, 1e-12);
  EXPECT_NEAR(tape.value(y)[1], expect, 1e-12);
}

TEST(GroupNorm, RejectsNonDividingGroups) {
  Tape<float> tape;
  EXPECT_THROW(ops::group_norm(tape, tape.constant(Tensor<float>({1, 6, 2, 2})), 4,
                               tape.constant(Tensor<float>({6})), tape.constant(Tensor<float>({6}))),
               ShapeError);
}

TEST(Attention, SingleKeyReturnsValue) {
  Rng rng(7);
  Tape<float> tape;
  auto q = random_tensor<float>(rng, {2, 5, 4});
  auto k = random_tensor<float>(rng, {2, 1, 4});
  auto v = random_tensor<float>(rng, {2, 1, 4});
  const Var o = ops::multi_head_attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), 2);
  const auto& out = tape.value(o);
  ASSERT_EQ(out.shape(), (Shape{2, 5, 4}));
  for (int b = 0; b < 2; ++b)
    for (int n = 0; n < 5; ++n)
      for (int c = 0; c < 4; ++c) EXPECT_FLOAT_EQ(out[(b * 5 + n) * 4 + c], v[b * 4 + c]);
}

TEST(Attention, ZeroQueryAveragesValues) {
  Rng rng(8);
  Tape<double> tape;
  auto k = random_tensor<double>(rng, {1, 6, 4});
  auto v = random_tensor<double>(rng, {1, 6, 4});
  const Var o = ops::multi_head_attention(tape, tape.constant(Tensor<double>({1, 3, 4})), tape.constant(k),
                                          tape.constant(v), 2);
  for (int c = 0; c < 4; ++c) {
    double mean = 0;
    for (int m = 0; m < 6; ++m) mean += v[m * 4 + c] / 6.0;
    for (int n = 0; n < 3; ++n) EXPECT_NEAR(tape.value(o)[n * 4 + c], mean, 1e-12);
  }
}

TEST(Attention, RejectsHeadsNotDividingDim) {
  Tape<float> tape;
  auto t = tape.constant(Tensor<float>({1, 2, 6}));
  EXPECT_THROW(ops::multi_head_attention(tape, t, t, t, 4), ShapeError);
}

TEST(Activations, SiluAndSoftmaxValues) {
  Tape<double> tape;
  const Var s = ops::silu(tape, tape.constant(Tensor<double>({2}, {0.0, 1.0})));
  EXPECT_EQ(tape.value(s)[0], 0.0);
  EXPECT_NEAR(tape.value(s)[1], 0.731059, 1e-6);

  const Var p = ops::softmax(tape, tape.constant(Tensor<double>({5}, 3.0)), 0);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(tape.value(p)[i], 0.2, 1e-15);
}

TEST(Activations, SoftmaxSumsToOneForLargeInputs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tape<float> tape;
    Tensor<float> x({3, 17, 2});
    rng.fill_uniform(x.values(), -50.0, 50.0);
    const auto& y = tape.value(ops::softmax(tape, tape.constant(x), 1));
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 2; ++c) {
        double s = 0;
        for (int j = 0; j < 17; ++j) s += y[(a * 17 + j) * 2 + c];
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Resize, IdentityAndConstant) {
  Rng rng(9);
  auto x = random_tensor<float>(rng, {2, 3, 8, 8});
  EXPECT_EQ(resize_bilinear_antialiased(x, 8, 8), x);
  for (auto [h, w] : {std::pair{3, 5}, {16, 16}, {1, 1}, {4, 12}, {7, 2}}) {
    const auto y = resize_bilinear_antialiased(Tensor<float>({2, 8, 8}, 0.37f), h, w);
    ASSERT_EQ(y.shape(), (Shape{2, h, w}));
    for (float v : y.values()) EXPECT_NEAR(v, 0.37f, 1e-6);
  }
}

TEST(Resize, RampDownscaleMatchesBruteForceFilter) {
  Tensor<double> ramp({4, 4});
  for (int i = 0; i < 16; ++i) ramp[i] = i;
  const auto out = resize_bilinear_antialiased(ramp, 2, 2);
  // Direct 2-D triangle filter: scale 2, support 2, half-pixel centers.
  auto tri = [](double u) { return std::max(0.0, 1.0 - std::abs(u)); };
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      const double cy = (oy + 0.5) * 2.0, cx = (ox + 0.5) * 2.0;
      double num = 0, den = 0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          const double w = tri((y + 0.5 - cy) / 2.0) * tri((x + 0.5 - cx) / 2.0);
          num += w * ramp[y * 4 + x];
          den += w;
        }
      EXPECT_NEAR(out[oy * 2 + ox], num / den, 1e-12);
    }
}

TEST(GradCheck, PolynomialIsExact) {
  Rng rng(10);
  auto x = random_tensor<double>(rng, {3, 4});
  const double err = grad_check([](Tape<double>& t, Var v) { return ops::sum(t, ops::mul(t, v, v)); }, x);
  EXPECT_LE(err, 1e-6);
}

TEST(GradCheck, DetectsHalvedGradient) {
  Rng rng(11);
  auto x = random_tensor<double>(rng, {5});
  // x^2 whose backward reports x instead of 2x.
  auto wrong_square_sum = [](Tape<double>& t, Var v) {
    Tensor<double> y = t.value(v);
    for (auto& e : y.values()) e *= e;
    const Var sq = t.record("wrong_square", std::move(y), {v}, [v](Tape<double>& tp, const Tensor<double>& g) {
      if (auto* d = tp.accumulator(v))
        for (std::int64_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * tp.value(v)[i];
    });
    return ops::sum(t, sq);
  };
  EXPECT_NEAR(grad_check(wrong_square_sum, x), 0.5, 1e-6);
}

class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed * 7919 + 1);
  const double tol = 1e-6;
  const double eps = 1e-3;

  // conv2d: input, weight, bias
  {
    const int stride = 1 + static_cast<int>(seed % 2);
    auto x = random_tensor<double>(rng, {2, 2, 5, 4});
    auto w = random_tensor<double>(rng, {3, 2, 3, 3}, 0.5);
    auto b = random_tensor<double>(rng, {3});
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) {
      return weighted_sum(t, ops::conv2d(t, v, t.constant(w), t.constant(b), stride, 1), seed);
    }, x, eps), tol) << "conv2d input";
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) {
      return weighted_sum(t, ops::conv2d(t, t.constant(x), v, t.constant(b), stride, 1), seed);
    }, w, eps), tol) << "conv2d weight";
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) {
      return weighted_sum(t, ops::conv2d(t, t.constant(x), t.constant(w), v, stride, 1), seed);
    }, b, eps), tol) << "conv2d bias";
  }
  // linear
  {
    auto x = random_tensor<double>(rng, {2, 3, 4});
    auto w = random_tensor<double>(rng, {5, 4});
    auto b = random_tensor<double>(rng, {5});
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) { return weighted_sum(t, ops::linear(t, v, t.constant(w), t.constant(b)), seed); }, x, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) { return weighted_sum(t, ops::linear(t, t.constant(x), v, t.constant(b)), seed); }, w, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) { return weighted_sum(t, ops::linear(t, t.constant(x), t.constant(w), v), seed); }, b, eps), tol);
  }
  // group_norm
  {
    auto x = random_tensor<double>(rng, {2, 4, 3, 3}, 2.0);
    auto g = random_tensor<double>(rng, {4});
    auto b = random_tensor<double>(rng, {4});
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) { return weighted_sum(t, ops::group_norm(t, v, 2, t.constant(g), t.constant(b)), seed); }, x, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) { return weighted_sum(t, ops::group_norm(t, t.constant(x), 2, v, t.constant(b)), seed); }, g, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var v) { return weighted_sum(t, ops::group_norm(t, t.constant(x), 2, t.constant(g), v), seed); }, b, eps), tol);
  }
  // attention
  {
    auto q = random_tensor<double>(rng, {2, 3, 4});
    auto k = random_tensor<double>(rng, {2, 5, 4});
    auto v = random_tensor<double>(rng, {2, 5, 4});
    EXPECT_LE(grad_check([&](Tape<double>& t, Var a) { return weighted_sum(t, ops::multi_head_attention(t, a, t.constant(k), t.constant(v), 2), seed); }, q, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var a) { return weighted_sum(t, ops::multi_head_attention(t, t.constant(q), a, t.constant(v), 2), seed); }, k, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var a) { return weighted_sum(t, ops::multi_head_attention(t, t.constant(q), t.constant(k), a, 2), seed); }, v, eps), tol);
  }
  // silu, softmax
  {
    auto x = random_tensor<double>(rng, {3, 5}, 2.0);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var a) { return weighted_sum(t, ops::silu(t, a), seed); }, x, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var a) { return weighted_sum(t, ops::softmax(t, a, 1), seed); }, x, eps), tol);
  }
  // layout plumbing used by the model
  {
    auto x = random_tensor<double>(rng, {4, 3, 2, 2});
    auto bias = random_tensor<double>(rng, {2, 3});
    EXPECT_LE(grad_check([&](Tape<double>& t, Var a) {
      auto tok = ops::to_temporal_tokens(t, ops::upsample_nearest2x(t, a), 2);
      return weighted_sum(t, ops::from_spatial_tokens(t, ops::to_spatial_tokens(t, ops::from_temporal_tokens(t, tok, 2, 4, 4)), 4, 4), seed);
    }, x, eps), tol);
    EXPECT_LE(grad_check([&](Tape<double>& t, Var a) { return weighted_sum(t, ops::add_frame_bias(t, t.constant(x), a, 2), seed); }, bias, eps), tol);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(0, 20));

class KernelAgreement : public ::testing::TestWithParam<int> {};

TEST_P(KernelAgreement, ParallelMatchesReference) {
  namespace kr = kernels::reference;
  namespace kp = kernels::parallel;
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 100);
  auto close = [](const Tensor<float>& a, const Tensor<float>& b) {
    double worst = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
    return worst;
  };
  const auto rnd = [&](std::int64_t lo, std::int64_t hi) { return rng.uniform_int(lo, hi); };

  const kernels::Conv2dDims cd{rnd(1, 3), rnd(1, 5), rnd(1, 6), rnd(3, 9), rnd(3, 9), 2 * rnd(0, 1) + 1, rnd(1, 2), rnd(0, 1)};
  auto x = random_tensor<float>(rng, {cd.batch, cd.in_channels, cd.height, cd.width});
  auto w = random_tensor<float>(rng, {cd.out_channels, cd.in_channels, cd.kernel, cd.kernel});
  auto b = random_tensor<float>(rng, {cd.out_channels});
  Tensor<float> y1({cd.batch, cd.out_channels, cd.out_height(), cd.out_width()}), y2 = y1;
  kr::conv2d_forward(cd, x.data(), w.data(), b.data(), y1.data());
  kp::conv2d_forward(cd, x.data(), w.data(), b.data(), y2.data());
  EXPECT_LT(close(y1, y2), 1e-4);
  auto dy = random_tensor<float>(rng, y1.shape());
  Tensor<float> dx1(x.shape()), dx2(x.shape()), dw1(w.shape()), dw2(w.shape()), db1(b.shape()), db2(b.shape());
  kr::conv2d_backward(cd, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
  kp::conv2d_backward(cd, x.data(), w.data(), dy.data(), dx2.data(), dw2.data(), db2.data());
  EXPECT_LT(close(dx1, dx2), 1e-4);
  EXPECT_LT(close(dw1, dw2), 1e-3);
  EXPECT_LT(close(db1, db2), 1e-4);

  const kernels::AttentionDims ad{rnd(1, 3), rnd(1, 9), rnd(1, 9), 4 * rnd(1, 3), 2};
  auto q = random_tensor<float>(rng, {ad.batch, ad.queries, ad.dim});
  auto k = random_tensor<float>(rng, {ad.batch, ad.keys, ad.dim});
  auto v = random_tensor<float>(rng, {ad.batch, ad.keys, ad.dim});
  Tensor<float> o1(q.shape()), o2(q.shape()), p1({ad.batch, ad.heads, ad.queries, ad.keys}), p2 = p1;
  kr::attention_forward(ad, q.data(), k.data(), v.data(), o1.data(), p1.data());
  kp::attention_forward(ad, q.data(), k.data(), v.data(), o2.data(), p2.data());
  EXPECT_LT(close(o1, o2), 1e-5);
  EXPECT_LT(close(p1, p2), 1e-6);
  auto dout = random_tensor<float>(rng, q.shape());
  Tensor<float> dq1(q.shape()), dq2(q.shape()), dk1(k.shape()), dk2(k.shape()), dv1(v.shape()), dv2(v.shape());
  kr::attention_backward(ad, q.data(), k.data(), v.data(), p1.data(), dout.data(), dq1.data(), dk1.data(), dv1.data());
  kp::attention_backward(ad, q.data(), k.data(), v.data(), p1.data(), dout.data(), dq2.data(), dk2.data(), dv2.data());
  EXPECT_LT(close(dq1, dq2), 1e-5);
  EXPECT_LT(close(dk1, dk2), 1e-5);
  EXPECT_LT(close(dv1, dv2), 1e-5);

  const kernels::GroupNormDims gd{rnd(1, 3), 4, rnd(1, 12), 2};
  auto gx = random_tensor<float>(rng, {gd.batch, gd.channels, gd.spatial});
  auto gamma = random_tensor<float>(rng, {4});
  auto beta = random_tensor<float>(rng, {4});
  Tensor<float> gy1(gx.shape()), gy2(gx.shape()), st1({2, gd.batch * 2}), st2 = st1;
  kr::group_norm_forward(gd, gx.data(), gamma.data(), beta.data(), 1e-5f, gy1.data(), st1.data(), st1.data() + gd.batch * 2);
  kp::group_norm_forward(gd, gx.data(), gamma.data(), beta.data(), 1e-5f, gy2.data(), st2.data(), st2.data() + gd.batch * 2);
  EXPECT_LT(close(gy1, gy2), 1e-4);

  const kernels::LinearDims ld{rnd(1, 7), rnd(1, 6), rnd(1, 6)};
  auto lx = random_tensor<float>(rng, {ld.rows, ld.in_features});
  auto lw = random_tensor<float>(rng, {ld.out_features, ld.in_features});
  Tensor<float> ly1({ld.rows, ld.out_features}), ly2 = ly1;
  kr::linear_forward(ld, lx.data(), lw.data(), static_cast<const float*>(nullptr), ly1.data());
  kp::linear_forward(ld, lx.data(), lw.data(), static_cast<const float*>(nullptr), ly2.data());
  EXPECT_LT(close(ly1, ly2), 1e-5);

  Tensor<float> sx({257});
  rng.fill_uniform(sx.values(), -30.0, 30.0);
  Tensor<float> s1(sx.shape()), s2(sx.shape());
  kr::silu_forward<float>(257, sx.data(), s1.data());
  kp::silu_forward<float>(257, sx.data(), s2.data());
  EXPECT_LT(close(s1, s2), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Seeds, KernelAgreement, ::testing::Range(0, 25));

TEST(Determinism, RepeatedOpsAreBitIdentical) {
  Rng rng(12);
  auto x = random_tensor<float>(rng, {2, 4, 8, 8});
  auto w = random_tensor<float>(rng, {4, 4, 3, 3});
  auto run = [&] {
    Tape<float> t;
    auto h = ops::conv2d(t, t.constant(x), t.constant(w), Var{}, 1, 1);
    auto tok = ops::to_spatial_tokens(t, h);
    return t.value(ops::multi_head_attention(t, tok, tok, tok, 2));
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, UnmarkedTensorsGetNoGradient) {
  Tape<double> tape;
  const Var a = tape.variable(Tensor<double>({3}, 2.0));
  const Var b = tape.constant(Tensor<double>({3}, 5.0));
  const Var loss = ops::sum(tape, ops::mul(tape, a, b));
  tape.backward(loss);
  ASSERT_NE(tape.grad(a), nullptr);
  EXPECT_EQ(tape.grad(a)->shape(), (Shape{3}));
  EXPECT_EQ(tape.grad(b), nullptr);
}

TEST(Tape, NonFiniteOutputIsAnError) {
  Tape<float> tape;
  const Var a = tape.constant(Tensor<float>({1}, std::numeric_limits<float>::max()));
  EXPECT_THROW(ops::scale(tape, a, 10.0f), NumericError);
}

TEST(SymPsdSqrt, DiagonalAndIdentity) {
  const auto id = sym_psd_sqrt(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  EXPECT_NEAR(id[0], 1, 1e-12);
  EXPECT_NEAR(id[1], 0, 1e-12);
  EXPECT_NEAR(id[3], 1, 1e-12);
  const auto d = sym_psd_sqrt(Tensor<double>({2, 2}, {4, 0, 0, 9}));
  EXPECT_NEAR(d[0], 2, 1e-12);
  EXPECT_NEAR(d[3], 3, 1e-12);
  EXPECT_NEAR(d[1], 0, 1e-12);
}

TEST(SymPsdSqrt, SquaresBackForRandomGram) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const int n = 6;
    auto s0 = random_tensor<double>(rng, {4, n});  // rank-deficient on purpose
    Tensor<double> a({n, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int r = 0; r < 4; ++r) a[i * n + j] += s0[r * n + i] * s0[r * n + j];
    const auto s = sym_psd_sqrt(a);
    double amax = 0;
    for (double v : a.values()) amax = std::max(amax, std::abs(v));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = 0;
        for (int k = 0; k < n; ++k) v += s[i * n + k] * s[k * n + j];
        EXPECT_NEAR(v, a[i * n + j], 1e-4 * amax);
      }
  }
}

TEST(SymPsdSqrt, RejectsAsymmetric) {
  EXPECT_THROW(sym_psd_sqrt(Tensor<double>({2, 2}, {1, 0.1, 0, 1})), std::invalid_argument);
}
