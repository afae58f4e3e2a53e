#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace sned {

enum class Role { Base, SSR };

/// Architecture hyperparameters of the elastic video U-Net.
struct ModelConfig {
  int in_channels = 3;
  int base_width = 32;
  std::vector<int> level_multipliers = {1, 2};
  int blocks_per_level = 1;
  int heads = 2;
  int width_quantum = 4;
  int time_embed_dim = 128;
  int cond_embed_dim = 64;
  int frames = 4;
  Role role = Role::Base;
  int vocab_size = 12;
  int caption_length = 5;
  int norm_groups = 4;
  int ff_mult = 2;
  bool temporal = true;  // false: image model without temporal attention

  int levels() const { return static_cast<int>(level_multipliers.size()); }
  int stage_width(int level) const { return base_width * level_multipliers.at(static_cast<std::size_t>(level)); }
  int num_blocks() const { return (2 * levels()) * blocks_per_level + 1; }
  int stem_in_channels() const { return role == Role::SSR ? 2 * in_channels : in_channels; }

  /// Empty when valid; otherwise human-readable problems.
  std::vector<std::string> problems() const;
  void validate() const;  // throws std::invalid_argument listing problems()

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

std::string role_name(Role r);
Role parse_role(const std::string& s);

}  // namespace sned
