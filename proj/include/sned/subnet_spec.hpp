#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace sned {

/// Elastic components of a diffusion block, in component_ratios order.
enum class Component : int { ResBlock = 0, TemporalAttention = 1, CrossAttention = 2, SpatialAttention = 3, FeedForward = 4 };
inline constexpr int kComponentsPerBlock = 5;

/// Droppable slots of a diffusion block, in drop_mask order.
enum class DropSlot : int { TemporalAttention = 0, CrossAttention = 1, SpatialAttention = 2, FeedForward = 3 };
inline constexpr int kDropSlots = 4;
inline constexpr int kDroppableAttentions = 3;

using BlockRatios = std::array<double, kComponentsPerBlock>;
/// true = component dropped.
using BlockMask = std::array<bool, kDropSlots>;

/// One point in the search space.
struct SubnetSpec {
  int resolution = 0;
  std::vector<double> stage_ratios;
  std::vector<BlockRatios> component_ratios;
  std::vector<BlockMask> drop_mask;

  bool dropped(int block, DropSlot slot) const {
    return drop_mask.at(static_cast<std::size_t>(block))[static_cast<std::size_t>(slot)];
  }
  double ratio(int block, Component c) const {
    return component_ratios.at(static_cast<std::size_t>(block))[static_cast<std::size_t>(c)];
  }

  /// All ratios 1.0 and nothing dropped.
  static SubnetSpec full(int levels, int blocks, int resolution);

  friend bool operator==(const SubnetSpec&, const SubnetSpec&) = default;
};

/// Keys: resolution, stage_ratios, component_ratios, drop_mask.
void to_json(nlohmann::json& j, const SubnetSpec& s);
void from_json(const nlohmann::json& j, SubnetSpec& s);

/// feed-forward dropped iff all three attentions are dropped.
BlockMask apply_ff_rule(BlockMask mask);

}  // namespace sned
