#include "sned/model/config.hpp"

#include <stdexcept>

#include "sned/subnet_spec.hpp"

namespace sned {

std::string role_name(Role r) { return r == Role::Base ? "base" : "ssr"; }

Role parse_role(const std::string& s) {
  if (s == "base" || s == "BASE") return Role::Base;
  if (s == "ssr" || s == "SSR") return Role::SSR;
  throw std::invalid_argument("unknown role '" + s + "' (expected base or ssr)");
}

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> p;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) p.push_back(msg);
  };
  need(in_channels >= 1, "in_channels must be >= 1");
  need(base_width >= 1, "base_width must be >= 1");
  need(!level_multipliers.empty(), "level_multipliers must not be empty");
  need(blocks_per_level >= 1, "blocks_per_level must be >= 1");
  need(heads >= 1, "heads must be >= 1");
  need(width_quantum >= 1, "width_quantum must be >= 1");
  need(heads >= 1 && width_quantum % heads == 0, "width_quantum must be a multiple of heads");
  need(norm_groups >= 1 && width_quantum % norm_groups == 0, "width_quantum must be a multiple of norm_groups");
  need(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim must be even and >= 2");
  need(cond_embed_dim >= 1, "cond_embed_dim must be >= 1");
  need(frames >= 1, "frames must be >= 1");
  need(vocab_size >= 1, "vocab_size must be >= 1");
  need(caption_length >= 1, "caption_length must be >= 1");
  need(ff_mult >= 1, "ff_mult must be >= 1");
  for (std::size_t i = 0; i < level_multipliers.size(); ++i) {
    const int w = base_width * level_multipliers[i];
    need(level_multipliers[i] >= 1, "level multiplier " + std::to_string(i) + " must be >= 1");
    need(width_quantum >= 1 && w % width_quantum == 0,
         "stage width " + std::to_string(w) + " at level " + std::to_string(i) + " is not a multiple of width_quantum");
  }
  return p;
}

void ModelConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& s : p) msg += " " + s + ";";
  throw std::invalid_argument(msg);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},       {"base_width", c.base_width},
                     {"level_multipliers", c.level_multipliers}, {"blocks_per_level", c.blocks_per_level},
                     {"heads", c.heads},                   {"width_quantum", c.width_quantum},
                     {"time_embed_dim", c.time_embed_dim}, {"cond_embed_dim", c.cond_embed_dim},
                     {"frames", c.frames},                 {"role", role_name(c.role)},
                     {"vocab_size", c.vocab_size},         {"caption_length", c.caption_length},
                     {"norm_groups", c.norm_groups},       {"ff_mult", c.ff_mult},
                     {"temporal", c.temporal}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.base_width = j.value("base_width", d.base_width);
  c.level_multipliers = j.value("level_multipliers", d.level_multipliers);
  c.blocks_per_level = j.value("blocks_per_level", d.blocks_per_level);
  c.heads = j.value("heads", d.heads);
  c.width_quantum = j.value("width_quantum", d.width_quantum);
  c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
  c.cond_embed_dim = j.value("cond_embed_dim", d.cond_embed_dim);
  c.frames = j.value("frames", d.frames);
  c.role = parse_role(j.value("role", role_name(d.role)));
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.caption_length = j.value("caption_length", d.caption_length);
  c.norm_groups = j.value("norm_groups", d.norm_groups);
  c.ff_mult = j.value("ff_mult", d.ff_mult);
  c.temporal = j.value("temporal", d.temporal);
}

SubnetSpec SubnetSpec::full(int levels, int blocks, int resolution) {
  SubnetSpec s;
  s.resolution = resolution;
  s.stage_ratios.assign(static_cast<std::size_t>(levels), 1.0);
  BlockRatios ones;
  ones.fill(1.0);
  s.component_ratios.assign(static_cast<std::size_t>(blocks), ones);
  s.drop_mask.assign(static_cast<std::size_t>(blocks), BlockMask{false, false, false, false});
  return s;
}

void to_json(nlohmann::json& j, const SubnetSpec& s) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& b : s.component_ratios) comps.push_back(std::vector<double>(b.begin(), b.end()));
  nlohmann::json mask = nlohmann::json::array();
  for (const auto& m : s.drop_mask) mask.push_back(std::vector<bool>(m.begin(), m.end()));
  j = nlohmann::json{{"resolution", s.resolution}, {"stage_ratios", s.stage_ratios}, {"component_ratios", comps}, {"drop_mask", mask}};
}

void from_json(const nlohmann::json& j, SubnetSpec& s) {
  s.resolution = j.at("resolution").get<int>();
  s.stage_ratios = j.at("stage_ratios").get<std::vector<double>>();
  s.component_ratios.clear();
  for (const auto& b : j.at("component_ratios")) {
    const auto v = b.get<std::vector<double>>();
    if (v.size() != kComponentsPerBlock) {
      throw std::invalid_argument("component_ratios entries must have " + std::to_string(kComponentsPerBlock) + " ratios");
    }
    BlockRatios r;
    std::copy(v.begin(), v.end(), r.begin());
    s.component_ratios.push_back(r);
  }
  s.drop_mask.clear();
  for (const auto& b : j.at("drop_mask")) {
    const auto v = b.get<std::vector<bool>>();
    if (v.size() != kDropSlots) throw std::invalid_argument("drop_mask entries must have " + std::to_string(kDropSlots) + " flags");
    BlockMask m;
    std::copy(v.begin(), v.end(), m.begin());
    s.drop_mask.push_back(m);
  }
}

BlockMask apply_ff_rule(BlockMask mask) {
  const bool all = mask[0] && mask[1] && mask[2];
  mask[static_cast<std::size_t>(DropSlot::FeedForward)] = all;
  return mask;
}

}  // namespace sned
