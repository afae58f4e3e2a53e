#include "sned/model/layout.hpp"

#include <cmath>
#include <stdexcept>

namespace sned {

double WidthVar::ratio(const SubnetSpec& spec) const {
  switch (kind) {
    case Kind::Fixed:
      return 1.0;
    case Kind::Stage:
      return spec.stage_ratios.at(static_cast<std::size_t>(index));
    case Kind::Component:
      return spec.component_ratios.at(static_cast<std::size_t>(index)).at(static_cast<std::size_t>(component));
  }
  return 1.0;
}

void Layout::add(LayerDesc d) {
  if (d.axes.size() != d.shape.size()) throw std::logic_error("layer " + d.name + ": axis bindings do not match shape");
  const int id = static_cast<int>(layers.size());
  if (!index_.emplace(d.name, id).second) throw std::logic_error("duplicate layer name " + d.name);
  layers.push_back(std::move(d));
}

std::optional<int> Layout::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Layout::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no layer named " + name);
  return it->second;
}

namespace {

using WV = WidthVar;

struct Builder {
  const ModelConfig& cfg;
  Layout out;

  void add(std::string name, Shape shape, std::vector<WV> axes, int block = -1, std::optional<DropSlot> slot = {}) {
    out.add(LayerDesc{std::move(name), std::move(shape), std::move(axes), block, slot});
  }

  void conv(const std::string& name, int cout, WV vout, int cin, WV vin, int block = -1) {
    add(name + ".w", {cout, cin, 3, 3}, {vout, vin, WV::fixed(), WV::fixed()}, block);
    add(name + ".b", {cout}, {vout}, block);
  }

  void norm(const std::string& name, int c, WV v, int block, std::optional<DropSlot> slot = {}) {
    add(name + ".g", {c}, {v}, block, slot);
    add(name + ".b", {c}, {v}, block, slot);
  }

  void attention(const std::string& p, int block, WV stage, int s, Component comp, DropSlot slot, int kv_in, bool kv_fixed) {
    const WV inner = WV::comp(block, comp);
    const WV kv = kv_fixed ? WV::fixed() : stage;
    norm(p + ".gn", s, stage, block, slot);
    add(p + ".q.w", {s, s}, {inner, stage}, block, slot);
    add(p + ".k.w", {s, kv_in}, {inner, kv}, block, slot);
    add(p + ".v.w", {s, kv_in}, {inner, kv}, block, slot);
    add(p + ".o.w", {s, s}, {stage, inner}, block, slot);
    add(p + ".o.b", {s}, {stage}, block, slot);
  }

  void block(const std::string& p, int level) {
    const int b = static_cast<int>(out.blocks.size());
    out.blocks.push_back(BlockInfo{p, level, BlockPath::Down});
    const int s = cfg.stage_width(level);
    const WV st = WV::stage(level);
    const WV hid = WV::comp(b, Component::ResBlock);
    norm(p + ".res.gn1", s, st, b);
    add(p + ".res.temb.w", {s, cfg.time_embed_dim}, {st, WV::fixed()}, b);
    add(p + ".res.temb.b", {s}, {st}, b);
    add(p + ".res.conv1.w", {s, s, 3, 3}, {hid, st, WV::fixed(), WV::fixed()}, b);
    add(p + ".res.conv1.b", {s}, {hid}, b);
    norm(p + ".res.gn2", s, hid, b);
    add(p + ".res.conv2.w", {s, s, 3, 3}, {st, hid, WV::fixed(), WV::fixed()}, b);
    add(p + ".res.conv2.b", {s}, {st}, b);
    if (cfg.temporal) attention(p + ".tattn", b, st, s, Component::TemporalAttention, DropSlot::TemporalAttention, s, false);
    attention(p + ".xattn", b, st, s, Component::CrossAttention, DropSlot::CrossAttention, cfg.cond_embed_dim, true);
    attention(p + ".sattn", b, st, s, Component::SpatialAttention, DropSlot::SpatialAttention, s, false);
    const int hf = cfg.ff_mult * s;
    const WV fh = WV::comp(b, Component::FeedForward);
    const auto ff = std::optional<DropSlot>(DropSlot::FeedForward);
    norm(p + ".ff.gn", s, st, b, ff);
    add(p + ".ff.fc1.w", {hf, s}, {fh, st}, b, ff);
    add(p + ".ff.fc1.b", {hf}, {fh}, b, ff);
    add(p + ".ff.fc2.w", {s, hf}, {st, fh}, b, ff);
    add(p + ".ff.fc2.b", {s}, {st}, b, ff);
  }
};

}  // namespace

Layout build_layout(const ModelConfig& cfg) {
  cfg.validate();
  Builder bld{cfg, {}};
  const int L = cfg.levels();
  const int td = cfg.time_embed_dim;
  const WV fx = WV::fixed();
  bld.add("time.fc1.w", {td, td}, {fx, fx});
  bld.add("time.fc1.b", {td}, {fx});
  bld.add("time.fc2.w", {td, td}, {fx, fx});
  bld.add("time.fc2.b", {td}, {fx});
  bld.add("caption.embed", {cfg.vocab_size, cfg.cond_embed_dim}, {fx, fx});
  bld.conv("stem", cfg.stage_width(0), WV::stage(0), cfg.stem_in_channels(), fx);
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < cfg.blocks_per_level; ++i) bld.block("down" + std::to_string(l) + "." + std::to_string(i), l);
    if (l + 1 < L) {
      bld.conv("down" + std::to_string(l) + ".ds", cfg.stage_width(l + 1), WV::stage(l + 1), cfg.stage_width(l), WV::stage(l));
    }
  }
  bld.block("mid", L - 1);
  bld.out.blocks.back().path = BlockPath::Mid;
  for (int l = L - 1; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    const int s = cfg.stage_width(l);
    const WV st = WV::stage(l);
    bld.add(p + ".merge.wh", {s, s, 3, 3}, {st, st, fx, fx});
    bld.add(p + ".merge.ws", {s, s, 3, 3}, {st, st, fx, fx});
    bld.add(p + ".merge.b", {s}, {st});
    for (int i = 0; i < cfg.blocks_per_level; ++i) {
      bld.block(p + "." + std::to_string(i), l);
      bld.out.blocks.back().path = BlockPath::Up;
    }
    if (l > 0) bld.conv(p + ".us", cfg.stage_width(l - 1), WV::stage(l - 1), s, st);
  }
  bld.add("out.gn.g", {cfg.stage_width(0)}, {WV::stage(0)});
  bld.add("out.gn.b", {cfg.stage_width(0)}, {WV::stage(0)});
  bld.conv("out", cfg.in_channels, fx, cfg.stage_width(0), WV::stage(0));
  return std::move(bld.out);
}

int active_width(int full_width, double ratio, int quantum) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("ratio " + std::to_string(ratio) + " outside [0,1]");
  if (quantum < 1) throw std::invalid_argument("quantum must be >= 1");
  const double tenths = ratio * 10.0;
  const double k = std::round(tenths);
  long long units = 0;
  if (std::abs(tenths - k) < 1e-9) {
    // exact: floor(k*C/(10q) + 1/2) == floor((2kC + 10q) / (20q))
    const long long kk = static_cast<long long>(k);
    units = (2 * kk * full_width + 10LL * quantum) / (20LL * quantum);
  } else {
    units = static_cast<long long>(std::floor(ratio * full_width / quantum + 0.5));
  }
  long long w = units * quantum;
  if (w < quantum) w = quantum;
  if (w > full_width) w = full_width;
  return static_cast<int>(w);
}

bool layer_active(const LayerDesc& layer, const SubnetSpec& spec) {
  if (!layer.slot) return true;
  return !spec.dropped(layer.block, *layer.slot);
}

Shape active_shape(const LayerDesc& layer, const SubnetSpec& spec, int quantum) {
  Shape s = layer.shape;
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (layer.axes[a].elastic()) s[a] = active_width(static_cast<int>(s[a]), layer.axes[a].ratio(spec), quantum);
  }
  return s;
}

void check_spec_dims(const ModelConfig& config, const SubnetSpec& spec) {
  const auto L = static_cast<std::size_t>(config.levels());
  const auto nb = static_cast<std::size_t>(config.num_blocks());
  if (spec.stage_ratios.size() != L) {
    throw std::invalid_argument("spec has " + std::to_string(spec.stage_ratios.size()) + " stage ratios, model has " +
                                std::to_string(L) + " levels");
  }
  if (spec.component_ratios.size() != nb || spec.drop_mask.size() != nb) {
    throw std::invalid_argument("spec block count does not match model (" + std::to_string(nb) + " blocks)");
  }
  if (spec.resolution < 1 || spec.resolution % (1 << (L - 1)) != 0) {
    throw std::invalid_argument("resolution " + std::to_string(spec.resolution) + " not divisible by 2^(levels-1)");
  }
}

}  // namespace sned
