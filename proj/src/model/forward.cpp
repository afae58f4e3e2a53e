#include "sned/model/forward.hpp"

#include <cmath>
#include <stdexcept>

#include "sned/numerics/ops.hpp"

namespace sned {

template <typename T>
SubnetBinding<T>::SubnetBinding(const Network<T>& net, const SubnetSpec& spec, bool trainable)
    : net_(&net), spec_(spec), trainable_(trainable) {
  check_spec_dims(net.config, spec);
}

template <typename T>
Var SubnetBinding<T>::param(Tape<T>& tape, const std::string& name) {
  const int id = net_->layout.index_of(name);
  if (auto it = cache_.find(id); it != cache_.end()) return bound_[it->second].var;
  const auto& d = net_->layout.layers[static_cast<std::size_t>(id)];
  if (!layer_active(d, spec_)) throw std::logic_error("layer " + name + " is dropped under this spec");
  Shape act = active_shape(d, spec_, net_->config.width_quantum);
  const auto& full = net_->weights[static_cast<std::size_t>(id)];
  Tensor<T> value;
  if (act == d.shape) {
    value = full;
  } else {
    SliceView<T> view(const_cast<T*>(full.data()), d.shape, act);
    value = view.gather();
  }
  const Var v = trainable_ ? tape.variable(std::move(value)) : tape.constant(std::move(value));
  cache_.emplace(id, bound_.size());
  bound_.push_back(Bound{id, v, std::move(act)});
  return v;
}

template <typename T>
Tensor<T> timestep_features(std::span<const int> t, int dim) {
  const int half = dim / 2;
  Tensor<T> out(Shape{static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = t[b] * freq;
      out[static_cast<std::int64_t>(b) * dim + i] = static_cast<T>(std::sin(a));
      out[static_cast<std::int64_t>(b) * dim + half + i] = static_cast<T>(std::cos(a));
    }
  }
  return out;
}

namespace {

template <typename T>
struct Net {
  Tape<T>& tape;
  SubnetBinding<T>& bind;
  const ModelConfig& cfg;
  int batch;
  int frames;
  Var temb_act;  // silu(time MLP output) [B, Td]
  Var caption;   // [B, L, Cc]

  Var p(const std::string& name) { return bind.param(tape, name); }
  bool dropped(int block, DropSlot s) const { return bind.spec().dropped(block, s); }

  Var conv(Var x, const std::string& name, int stride = 1) {
    return ops::conv2d(tape, x, p(name + ".w"), p(name + ".b"), stride, 1);
  }
  Var norm(Var x, const std::string& name) {
    return ops::group_norm(tape, x, cfg.norm_groups, p(name + ".g"), p(name + ".b"));
  }
  Var proj(Var x, const std::string& name, bool bias) {
    return ops::linear(tape, x, p(name + ".w"), bias ? p(name + ".b") : Var{});
  }

  Var resblock(Var x, const std::string& pre) {
    Var h = ops::silu(tape, norm(x, pre + ".gn1"));
    h = ops::add_frame_bias(tape, h, proj(temb_act, pre + ".temb", true), frames);
    h = conv(h, pre + ".conv1");
    h = ops::silu(tape, norm(h, pre + ".gn2"));
    h = conv(h, pre + ".conv2");
    return ops::add(tape, x, h);
  }

  Var self_attention(Var x, const std::string& pre, bool temporal) {
    const auto& s = tape.value(x).shape();
    const int H = static_cast<int>(s[2]), W = static_cast<int>(s[3]);
    Var h = norm(x, pre + ".gn");
    Var tok = temporal ? ops::to_temporal_tokens(tape, h, frames) : ops::to_spatial_tokens(tape, h);
    Var a = ops::multi_head_attention(tape, proj(tok, pre + ".q", false), proj(tok, pre + ".k", false),
                                      proj(tok, pre + ".v", false), cfg.heads);
    Var o = proj(a, pre + ".o", true);
    Var back = temporal ? ops::from_temporal_tokens(tape, o, frames, H, W) : ops::from_spatial_tokens(tape, o, H, W);
    return ops::add(tape, x, back);
  }

  Var cross_attention(Var x, const std::string& pre) {
    const auto& s = tape.value(x).shape();
    const int H = static_cast<int>(s[2]), W = static_cast<int>(s[3]);
    Var tok = ops::to_spatial_tokens(tape, norm(x, pre + ".gn"));
    Var k = ops::repeat_batch(tape, proj(caption, pre + ".k", false), frames);
    Var v = ops::repeat_batch(tape, proj(caption, pre + ".v", false), frames);
    Var a = ops::multi_head_attention(tape, proj(tok, pre + ".q", false), k, v, cfg.heads);
    return ops::add(tape, x, ops::from_spatial_tokens(tape, proj(a, pre + ".o", true), H, W));
  }

  Var feed_forward(Var x, const std::string& pre) {
    const auto& s = tape.value(x).shape();
    const int H = static_cast<int>(s[2]), W = static_cast<int>(s[3]);
    Var tok = ops::to_spatial_tokens(tape, norm(x, pre + ".gn"));
    Var h = ops::silu(tape, proj(tok, pre + ".fc1", true));
    h = proj(h, pre + ".fc2", true);
    return ops::add(tape, x, ops::from_spatial_tokens(tape, h, H, W));
  }

  Var block(Var x, int b) {
    const std::string& pre = bind.net().layout.blocks[static_cast<std::size_t>(b)].prefix;
    x = resblock(x, pre + ".res");
    if (cfg.temporal && !dropped(b, DropSlot::TemporalAttention)) x = self_attention(x, pre + ".tattn", true);
    if (!dropped(b, DropSlot::CrossAttention)) x = cross_attention(x, pre + ".xattn");
    if (!dropped(b, DropSlot::SpatialAttention)) x = self_attention(x, pre + ".sattn", false);
    if (!dropped(b, DropSlot::FeedForward)) x = feed_forward(x, pre + ".ff");
    return x;
  }
};

}  // namespace

template <typename T>
Var forward(Tape<T>& tape, SubnetBinding<T>& bind, Var x, std::span<const int> t, std::span<const int> captions,
            std::optional<Var> cond) {
  const ModelConfig& cfg = bind.net().config;
  const SubnetSpec& spec = bind.spec();
  const Shape xs = tape.value(x).shape();
  if (xs.size() != 5) throw ShapeError("forward expects [B,F,C,H,W], got " + shape_str(xs));
  const int B = static_cast<int>(xs[0]), F = static_cast<int>(xs[1]);
  const int C = static_cast<int>(xs[2]), H = static_cast<int>(xs[3]), W = static_cast<int>(xs[4]);
  if (C != cfg.in_channels) throw ShapeError("input has " + std::to_string(C) + " channels, model expects " + std::to_string(cfg.in_channels));
  if (H != spec.resolution || W != spec.resolution) {
    throw ShapeError("resolution mismatch: input " + std::to_string(H) + "x" + std::to_string(W) + ", spec " +
                     std::to_string(spec.resolution));
  }
  if (static_cast<int>(t.size()) != B) throw ShapeError("expected " + std::to_string(B) + " timesteps");
  if (static_cast<int>(captions.size()) != B * cfg.caption_length) {
    throw ShapeError("expected " + std::to_string(B * cfg.caption_length) + " caption tokens");
  }
  if ((cfg.role == Role::SSR) != cond.has_value()) {
    throw std::invalid_argument(cfg.role == Role::SSR ? "SSR model requires low-resolution conditioning"
                                                      : "base model takes no conditioning video");
  }

  Var temb = tape.constant(timestep_features<T>(t, cfg.time_embed_dim));
  Net<T> n{tape, bind, cfg, B, F, {}, {}};
  temb = ops::silu(tape, n.proj(temb, "time.fc1", true));
  temb = n.proj(temb, "time.fc2", true);
  n.temb_act = ops::silu(tape, temb);
  n.caption = ops::embedding(tape, n.p("caption.embed"), captions, Shape{B, cfg.caption_length});

  Var h = ops::reshape(tape, x, Shape{static_cast<std::int64_t>(B) * F, C, H, W});
  if (cond) {
    if (tape.value(*cond).shape() != xs) throw ShapeError("conditioning shape " + shape_str(tape.value(*cond).shape()) + " != " + shape_str(xs));
    h = ops::concat_channels(tape, h, ops::reshape(tape, *cond, Shape{static_cast<std::int64_t>(B) * F, C, H, W}));
  }
  h = n.conv(h, "stem");

  const int L = cfg.levels();
  const int bpl = cfg.blocks_per_level;
  std::vector<Var> skips;
  int b = 0;
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < bpl; ++i) h = n.block(h, b++);
    skips.push_back(h);
    if (l + 1 < L) h = n.conv(h, "down" + std::to_string(l) + ".ds", 2);
  }
  h = n.block(h, b++);
  for (int l = L - 1; l >= 0; --l) {
    const std::string pre = "up" + std::to_string(l);
    Var a = ops::conv2d(tape, h, n.p(pre + ".merge.wh"), n.p(pre + ".merge.b"), 1, 1);
    Var s = ops::conv2d(tape, skips[static_cast<std::size_t>(l)], n.p(pre + ".merge.ws"), Var{}, 1, 1);
    h = ops::add(tape, a, s);
    for (int i = 0; i < bpl; ++i) h = n.block(h, b++);
    if (l > 0) h = n.conv(ops::upsample_nearest2x(tape, h), pre + ".us");
  }
  h = ops::silu(tape, n.norm(h, "out.gn"));
  h = n.conv(h, "out");
  return ops::reshape(tape, h, xs);
}

template <typename T>
Tensor<T> forward(const Network<T>& net, const SubnetSpec& spec, const Tensor<T>& x, std::span<const int> t,
                  std::span<const int> captions, const Tensor<T>* cond) {
  Tape<T> tape;
  SubnetBinding<T> bind(net, spec, false);
  std::optional<Var> c;
  if (cond) c = tape.constant(*cond);
  const Var out = forward(tape, bind, tape.constant(x), t, captions, c);
  return tape.value(out);
}

#define SNED_INST(T)                                                                                          \
  template class SubnetBinding<T>;                                                                            \
  template Tensor<T> timestep_features<T>(std::span<const int>, int);                                         \
  template Var forward<T>(Tape<T>&, SubnetBinding<T>&, Var, std::span<const int>, std::span<const int>,       \
                          std::optional<Var>);                                                                \
  template Tensor<T> forward<T>(const Network<T>&, const SubnetSpec&, const Tensor<T>&, std::span<const int>, \
                                std::span<const int>, const Tensor<T>*);
SNED_INST(float)
SNED_INST(double)
#undef SNED_INST

}  // namespace sned
