#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "sned/model/checkpoint.hpp"
#include "sned/model/cost.hpp"
#include "sned/model/forward.hpp"
#include "sned/numerics/ops.hpp"
#include "sned/numerics/rng.hpp"

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

struct Inputs {
  Tensor<float> x;
  std::vector<int> t;
  std::vector<int> caps;
};

Inputs random_inputs(const ModelConfig& c, int batch, int frames, int res, std::uint64_t seed) {
  Rng rng(seed);
  Inputs in{Tensor<float>(Shape{batch, frames, c.in_channels, res, res}), {}, {}};
  rng.fill_normal(in.x.values());
  for (int b = 0; b < batch; ++b) in.t.push_back(static_cast<int>(rng.uniform_int(1, 100)));
  for (int i = 0; i < batch * c.caption_length; ++i) in.caps.push_back(static_cast<int>(rng.uniform_int(0, c.vocab_size - 1)));
  return in;
}

SubnetSpec random_spec(const ModelConfig& c, int res, Rng& rng) {
  static const double ratios[] = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  SubnetSpec s = native_spec(c, res);
  for (auto& r : s.stage_ratios) r = ratios[rng.uniform_int(0, 6)];
  for (auto& b : s.component_ratios)
    for (auto& r : b) r = ratios[rng.uniform_int(0, 6)];
  for (auto& m : s.drop_mask) {
    for (int k = 0; k < 3; ++k) m[static_cast<std::size_t>(k)] = rng.uniform() < 0.4;
    m = apply_ff_rule(m);
  }
  return s;
}

float max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  float m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(ActiveWidth, Examples) {
  EXPECT_EQ(active_width(64, 1.0, 4), 64);
  EXPECT_EQ(active_width(64, 0.4, 4), 24);
  EXPECT_EQ(active_width(8, 0.4, 4), 4);
  EXPECT_EQ(active_width(32, 0.5, 4), 16);
  EXPECT_EQ(active_width(40, 0.3, 4), 12);
}

TEST(ActiveWidth, HalfUpRounding) {
  // 0.5 * 24 / 4 = 3 exactly; 0.7 * 20 / 4 = 3.5 rounds up to 4
  EXPECT_EQ(active_width(24, 0.5, 4), 12);
  EXPECT_EQ(active_width(20, 0.7, 4), 16);
}

TEST(ActiveWidth, RejectsOutOfRange) {
  EXPECT_THROW(active_width(8, 1.1, 4), std::invalid_argument);
  EXPECT_THROW(active_width(8, -0.1, 4), std::invalid_argument);
}

TEST(BuildSupernet, DefaultHasFiveBlocks) {
  const Supernet net = build_supernet(ModelConfig{}, 0);
  ASSERT_EQ(net.layout.blocks.size(), 5u);
  EXPECT_EQ(net.layout.blocks[0].prefix, "down0.0");
  EXPECT_EQ(net.layout.blocks[2].prefix, "mid");
  EXPECT_EQ(net.layout.blocks[4].prefix, "up0.0");
}

TEST(BuildSupernet, SameSeedSameWeights) {
  const Supernet a = build_supernet(micro_config(), 7);
  const Supernet b = build_supernet(micro_config(), 7);
  const Supernet c = build_supernet(micro_config(), 8);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_NE(a.weights, c.weights);
}

TEST(BuildSupernet, SsrStemTakesConditioning) {
  ModelConfig c;
  c.role = Role::SSR;
  const Supernet net = build_supernet(c, 0);
  EXPECT_EQ(net.weight("stem.w").shape(), (Shape{32, 6, 3, 3}));
}

TEST(BuildSupernet, RejectsInvalidConfig) {
  ModelConfig c;
  c.width_quantum = 3;
  EXPECT_THROW(build_supernet(c, 0), std::invalid_argument);
  c = ModelConfig{};
  c.base_width = 30;
  EXPECT_THROW(build_supernet(c, 0), std::invalid_argument);
}

TEST(BuildSupernet, LayerNamesUnique) {
  const Supernet net = build_supernet(ModelConfig{}, 0);
  std::set<std::string> names;
  for (const auto& l : net.layout.layers) EXPECT_TRUE(names.insert(l.name).second) << l.name;
}

TEST(SliceWeights, FullRatioIsWholeArray) {
  Supernet net = build_supernet(micro_config(), 1);
  const int id = net.layout.index_of("down0.0.res.conv1.w");
  const auto view = slice_weights(net, id, 1.0, 1.0);
  EXPECT_EQ(view.gather(), net.weights[static_cast<std::size_t>(id)]);
}

TEST(SliceWeights, LeadingOutputChannels) {
  Supernet net = build_supernet(micro_config(), 1);
  const int id = net.layout.index_of("down0.0.res.conv1.w");
  ASSERT_EQ(net.weights[static_cast<std::size_t>(id)].shape(), (Shape{8, 8, 3, 3}));
  const auto view = slice_weights(net, id, 1.0, 0.5);
  ASSERT_EQ(view.shape(), (Shape{4, 8, 3, 3}));
  const Tensor<float> g = view.gather();
  const auto& full = net.weights[static_cast<std::size_t>(id)];
  for (std::int64_t i = 0; i < g.numel(); ++i) EXPECT_EQ(g[i], full[i]);  // first 4 filters are contiguous
}

TEST(SliceWeights, BiasPrefix) {
  Supernet net = build_supernet(micro_config(), 1);
  const int id = net.layout.index_of("down0.0.res.conv2.b");
  net.weights[static_cast<std::size_t>(id)] = Tensor<float>(Shape{8}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto view = slice_weights(net, id, 1.0, 0.5);
  EXPECT_EQ(view.gather(), Tensor<float>(Shape{4}, {1, 2, 3, 4}));
}

TEST(SliceWeights, WritesAlias) {
  Supernet net = build_supernet(micro_config(), 1);
  const int id = net.layout.index_of("down0.0.res.conv2.w");
  auto view = slice_weights(net, id, 0.5, 0.5);
  view.at({3, 2, 1, 0}) = 42.0f;
  const auto& full = net.weights[static_cast<std::size_t>(id)];
  EXPECT_EQ(full[((3 * 8 + 2) * 3 + 1) * 3 + 0], 42.0f);
}

TEST(SliceWeights, NestedPrefixes) {
  const Shape full{16, 24, 3, 3};
  const double ratios[] = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  for (std::size_t i = 0; i + 1 < 7; ++i) {
    const Shape a{active_width(16, ratios[i], 4), active_width(24, ratios[i], 4), 3, 3};
    const Shape b{active_width(16, ratios[i + 1], 4), active_width(24, ratios[i + 1], 4), 3, 3};
    std::set<std::int64_t> sb;
    for_each_slice_offset(full, b, [&](std::int64_t f, std::int64_t) { sb.insert(f); });
    for_each_slice_offset(full, a, [&](std::int64_t f, std::int64_t) { EXPECT_TRUE(sb.count(f)); });
  }
}

TEST(Forward, ResolutionAgnostic) {
  const ModelConfig c = micro_config();
  const Supernet net = build_supernet(c, 3);
  for (int res : {16, 32, 64}) {
    const Inputs in = random_inputs(c, 1, 2, res, 11);
    const Tensor<float> y = forward(net, native_spec(c, res), in.x, in.t, in.caps);
    EXPECT_EQ(y.shape(), in.x.shape());
    EXPECT_TRUE(y.all_finite());
  }
}

TEST(Forward, Deterministic) {
  const ModelConfig c = micro_config();
  const Supernet net = build_supernet(c, 3);
  const Inputs in = random_inputs(c, 2, 2, 16, 5);
  Rng rng(9);
  const SubnetSpec s = random_spec(c, 16, rng);
  EXPECT_EQ(forward(net, s, in.x, in.t, in.caps), forward(net, s, in.x, in.t, in.caps));
}

TEST(Forward, RejectsMismatches) {
  const ModelConfig c = micro_config();
  const Supernet net = build_supernet(c, 3);
  const Inputs in = random_inputs(c, 1, 2, 16, 5);
  EXPECT_THROW(forward(net, native_spec(c, 32), in.x, in.t, in.caps), ShapeError);
  SubnetSpec bad = native_spec(c, 16);
  bad.stage_ratios.push_back(1.0);
  EXPECT_THROW(forward(net, bad, in.x, in.t, in.caps), std::invalid_argument);
}

TEST(Forward, DroppedBranchEqualsZeroedBranch) {
  const ModelConfig c = micro_config();
  Supernet net = build_supernet(c, 4);
  const Inputs in = random_inputs(c, 2, 2, 16, 6);
  SubnetSpec dropped = native_spec(c, 16);
  dropped.drop_mask[2][static_cast<std::size_t>(DropSlot::SpatialAttention)] = true;
  dropped.drop_mask[3][static_cast<std::size_t>(DropSlot::TemporalAttention)] = true;
  const Tensor<float> a = forward(net, dropped, in.x, in.t, in.caps);
  net.weight("mid.sattn.o.w").fill(0.0f);
  net.weight("mid.sattn.o.b").fill(0.0f);
  net.weight("up1.0.tattn.o.w").fill(0.0f);
  net.weight("up1.0.tattn.o.b").fill(0.0f);
  const Tensor<float> b = forward(net, native_spec(c, 16), in.x, in.t, in.caps);
  EXPECT_EQ(a, b);
}

namespace {

// U-Net with ResBlocks only, written directly against the ops.
Tensor<float> resblock_only_oracle(const Supernet& net, const Inputs& in) {
  const ModelConfig& c = net.config;
  Tape<float> tape;
  auto P = [&](const std::string& n) { return tape.constant(net.weight(n)); };
  const auto& xs = in.x.shape();
  const int B = static_cast<int>(xs[0]), F = static_cast<int>(xs[1]), H = static_cast<int>(xs[3]);
  Var temb = tape.constant(timestep_features<float>(in.t, c.time_embed_dim));
  temb = ops::linear(tape, ops::silu(tape, ops::linear(tape, temb, P("time.fc1.w"), P("time.fc1.b"))), P("time.fc2.w"),
                     P("time.fc2.b"));
  temb = ops::silu(tape, temb);
  auto conv = [&](Var x, const std::string& n, int stride = 1) {
    return ops::conv2d(tape, x, P(n + ".w"), P(n + ".b"), stride, 1);
  };
  auto gn = [&](Var x, const std::string& n) { return ops::group_norm(tape, x, c.norm_groups, P(n + ".g"), P(n + ".b")); };
  auto res = [&](Var x, const std::string& p) {
    Var h = ops::silu(tape, gn(x, p + ".gn1"));
    h = ops::add_frame_bias(tape, h, ops::linear(tape, temb, P(p + ".temb.w"), P(p + ".temb.b")), F);
    h = ops::silu(tape, gn(conv(h, p + ".conv1"), p + ".gn2"));
    return ops::add(tape, x, conv(h, p + ".conv2"));
  };
  Var h = conv(tape.constant(in.x.reshaped(Shape{B * F, xs[2], H, H})), "stem");
  h = res(h, "down0.0.res");
  Var skip0 = h;
  h = conv(h, "down0.ds", 2);
  h = res(h, "down1.0.res");
  Var skip1 = h;
  h = res(h, "mid.res");
  h = ops::add(tape, ops::conv2d(tape, h, P("up1.merge.wh"), P("up1.merge.b"), 1, 1),
               ops::conv2d(tape, skip1, P("up1.merge.ws"), Var{}, 1, 1));
  h = res(h, "up1.0.res");
  h = conv(ops::upsample_nearest2x(tape, h), "up1.us");
  h = ops::add(tape, ops::conv2d(tape, h, P("up0.merge.wh"), P("up0.merge.b"), 1, 1),
               ops::conv2d(tape, skip0, P("up0.merge.ws"), Var{}, 1, 1));
  h = res(h, "up0.0.res");
  h = conv(ops::silu(tape, gn(h, "out.gn")), "out");
  return tape.value(h).reshaped(xs);
}

}  // namespace

TEST(Forward, AllDroppedEqualsResBlockNetwork) {
  const ModelConfig c = micro_config();
  const Supernet net = build_supernet(c, 12);
  SubnetSpec s = native_spec(c, 16);
  for (auto& m : s.drop_mask) m = apply_ff_rule({true, true, true, false});
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Inputs in = random_inputs(c, 2, 2, 16, 100 + seed);
    const Tensor<float> a = forward(net, s, in.x, in.t, in.caps);
    const Tensor<float> b = resblock_only_oracle(net, in);
    EXPECT_EQ(a, b);
  }
}

TEST(Inflation, MatchesPerFrameImageModel) {
  ModelConfig video = micro_config();
  video.frames = 3;
  ModelConfig image = video;
  image.temporal = false;
  const Supernet img = build_supernet(image, 21);
  const Supernet inf = inflate_image_checkpoint(img, video, 5);
  EXPECT_GT(param_count(inf, native_spec(video, 16)), param_count(img, native_spec(image, 16)));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Inputs in = random_inputs(video, 2, 3, 16, 300 + seed);
    const Tensor<float> y = forward(inf, native_spec(video, 16), in.x, in.t, in.caps);
    const std::int64_t per_frame = 3 * 16 * 16;
    for (int f = 0; f < 3; ++f) {
      Tensor<float> xf(Shape{2, 1, 3, 16, 16});
      for (int b = 0; b < 2; ++b)
        std::copy_n(in.x.data() + (b * 3 + f) * per_frame, per_frame, xf.data() + b * per_frame);
      const Tensor<float> yf = forward(img, native_spec(image, 16), xf, in.t, in.caps);
      for (int b = 0; b < 2; ++b)
        for (std::int64_t i = 0; i < per_frame; ++i)
          EXPECT_NEAR(y[(b * 3 + f) * per_frame + i], yf[b * per_frame + i], 1e-6);
    }
  }
}

TEST(Inflation, RejectsLayoutMismatch) {
  ModelConfig video = micro_config();
  ModelConfig image = video;
  image.temporal = false;
  image.base_width = 16;
  EXPECT_THROW(inflate_image_checkpoint(build_supernet(image, 0), video), std::invalid_argument);
}

TEST(ParamCount, SingleConvExample) {
  Layout l;
  l.add(LayerDesc{"c.w", {24, 24, 3, 3}, {WidthVar::stage(0), WidthVar::stage(0), {}, {}}, -1, {}});
  l.add(LayerDesc{"c.b", {24}, {WidthVar::stage(0)}, -1, {}});
  ModelConfig c;
  EXPECT_EQ(param_count(c, l, native_spec(c, 16)), 5208);
}

TEST(ParamCount, FullSpecIsTotal) {
  const Supernet net = build_supernet(ModelConfig{}, 0);
  EXPECT_EQ(param_count(net, native_spec(net.config, 32)), net.total_elements());
}

TEST(Cost, ConvFlopExample) {
  ModelConfig c;
  c.base_width = 4;
  c.level_multipliers = {1};
  c.frames = 1;
  const Layout l = build_layout(c);
  for (const auto& t : flop_breakdown(c, l, native_spec(c, 8))) {
    if (t.name == "down0.0.res.conv1") EXPECT_EQ(t.flops, 18432);
  }
}

TEST(Cost, MonotoneUnderRatioDecrease) {
  const ModelConfig c = ModelConfig{};
  const Layout l = build_layout(c);
  Rng rng(77);
  static const double ratios[] = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    const SubnetSpec big = random_spec(c, 32, rng);
    SubnetSpec small = big;
    for (auto& r : small.stage_ratios) r = std::min(r, ratios[rng.uniform_int(0, 6)]);
    for (auto& b : small.component_ratios)
      for (auto& r : b) r = std::min(r, ratios[rng.uniform_int(0, 6)]);
    EXPECT_LE(param_count(c, l, small), param_count(c, l, big));
    EXPECT_LE(flop_count(c, l, small), flop_count(c, l, big));
  }
}

TEST(Cost, DroppingStrictlyDecreases) {
  const ModelConfig c = ModelConfig{};
  const Layout l = build_layout(c);
  const SubnetSpec full = native_spec(c, 32);
  for (int b = 0; b < c.num_blocks(); ++b) {
    for (int k = 0; k < 3; ++k) {
      SubnetSpec s = full;
      s.drop_mask[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)] = true;
      EXPECT_LT(flop_count(c, l, s), flop_count(c, l, full));
      EXPECT_LT(param_count(c, l, s), param_count(c, l, full));
    }
  }
}

TEST(Cost, HalvingResolutionScalesConvAndSpatialTerms) {
  const ModelConfig c = ModelConfig{};
  const Layout l = build_layout(c);
  const auto hi = flop_breakdown(c, l, native_spec(c, 32));
  const auto lo = flop_breakdown(c, l, native_spec(c, 16));
  ASSERT_EQ(hi.size(), lo.size());
  for (std::size_t i = 0; i < hi.size(); ++i) {
    const auto& n = hi[i].name;
    const bool conv = n.find("conv") != std::string::npos || n.find("stem") == 0 || n.find(".ds") != std::string::npos ||
                      n.find(".us") != std::string::npos || n.find("merge") != std::string::npos || n == "out";
    const bool spatial = n.find(".sattn") != std::string::npos;
    if (conv || spatial) EXPECT_GE(hi[i].flops, 4 * lo[i].flops) << n;
  }
}

TEST(Checkpoint, RoundTripBitIdentical) {
  const Supernet net = build_supernet(micro_config(), 5);
  const auto path = std::filesystem::temp_directory_path() / "sned_test_rt.snw";
  save_network(path, net);
  const Supernet back = load_network(path);
  EXPECT_EQ(back.config, net.config);
  EXPECT_EQ(back.weights, net.weights);
  ASSERT_EQ(back.layout.layers.size(), net.layout.layers.size());
  for (std::size_t i = 0; i < net.layout.layers.size(); ++i) EXPECT_EQ(back.layout.layers[i].name, net.layout.layers[i].name);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  const Supernet net = build_supernet(micro_config(), 5);
  const auto path = std::filesystem::temp_directory_path() / "sned_test_bad.snw";
  save_network(path, net);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 4);
  EXPECT_THROW(load_network(path), CheckpointError);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    load_network(path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(SpecJson, RoundTrip) {
  Rng rng(1);
  const SubnetSpec s = random_spec(ModelConfig{}, 32, rng);
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<SubnetSpec>(), s);
  EXPECT_TRUE(j.contains("resolution") && j.contains("stage_ratios") && j.contains("component_ratios") && j.contains("drop_mask"));
}
