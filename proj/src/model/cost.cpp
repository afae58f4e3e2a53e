#include "sned/model/cost.hpp"

namespace sned {

namespace {

struct Counter {
  const ModelConfig& cfg;
  const Layout& layout;
  const SubnetSpec& spec;
  std::vector<FlopTerm> terms;

  Shape w(const std::string& name) const { return active_shape(layout.at(name), spec, cfg.width_quantum); }

  void conv(const std::string& name, std::int64_t out_res) {
    const Shape s = w(name + ".w");
    terms.push_back({name, 2 * s[2] * s[3] * s[1] * s[0] * out_res * out_res * cfg.frames});
  }
  void linear(const std::string& name, std::int64_t tokens) {
    const Shape s = w(name + ".w");
    terms.push_back({name, 2 * s[0] * s[1] * tokens});
  }
  void attention_core(const std::string& name, std::int64_t n, std::int64_t m, std::int64_t sequences) {
    const std::int64_t d = w(name + ".q.w")[0];
    terms.push_back({name + ".core", 4 * n * m * d * sequences});
  }

  void block(int b) {
    const BlockInfo& info = layout.blocks[static_cast<std::size_t>(b)];
    const std::string& p = info.prefix;
    const std::int64_t r = spec.resolution >> info.level;
    const std::int64_t P = r * r, F = cfg.frames, L = cfg.caption_length;
    linear(p + ".res.temb", 1);
    conv(p + ".res.conv1", r);
    conv(p + ".res.conv2", r);
    if (cfg.temporal && !spec.dropped(b, DropSlot::TemporalAttention)) {
      for (const char* x : {".q", ".k", ".v", ".o"}) linear(p + ".tattn" + x, F * P);
      attention_core(p + ".tattn", F, F, P);
    }
    if (!spec.dropped(b, DropSlot::CrossAttention)) {
      linear(p + ".xattn.q", F * P);
      linear(p + ".xattn.k", L);
      linear(p + ".xattn.v", L);
      linear(p + ".xattn.o", F * P);
      attention_core(p + ".xattn", P, L, F);
    }
    if (!spec.dropped(b, DropSlot::SpatialAttention)) {
      for (const char* x : {".q", ".k", ".v", ".o"}) linear(p + ".sattn" + x, F * P);
      attention_core(p + ".sattn", P, P, F);
    }
    if (!spec.dropped(b, DropSlot::FeedForward)) {
      linear(p + ".ff.fc1", F * P);
      linear(p + ".ff.fc2", F * P);
    }
  }
};

}  // namespace

std::vector<FlopTerm> flop_breakdown(const ModelConfig& config, const Layout& layout, const SubnetSpec& spec) {
  check_spec_dims(config, spec);
  Counter c{config, layout, spec, {}};
  const int L = config.levels();
  const std::int64_t R = spec.resolution;
  c.linear("time.fc1", 1);
  c.linear("time.fc2", 1);
  c.conv("stem", R);
  int b = 0;
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < config.blocks_per_level; ++i) c.block(b++);
    if (l + 1 < L) c.conv("down" + std::to_string(l) + ".ds", R >> (l + 1));
  }
  c.block(b++);
  for (int l = L - 1; l >= 0; --l) {
    const std::string p = "up" + std::to_string(l);
    const Shape wh = c.w(p + ".merge.wh");
    const Shape ws = c.w(p + ".merge.ws");
    const std::int64_t r = R >> l;
    c.terms.push_back({p + ".merge", 2 * 9 * (wh[0] * wh[1] + ws[0] * ws[1]) * r * r * config.frames});
    for (int i = 0; i < config.blocks_per_level; ++i) c.block(b++);
    if (l > 0) c.conv(p + ".us", R >> (l - 1));
  }
  c.conv("out", R);
  return std::move(c.terms);
}

std::int64_t flop_count(const ModelConfig& config, const Layout& layout, const SubnetSpec& spec) {
  std::int64_t n = 0;
  for (const auto& t : flop_breakdown(config, layout, spec)) n += t.flops;
  return n;
}

}  // namespace sned
