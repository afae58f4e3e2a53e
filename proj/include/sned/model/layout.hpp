#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sned/model/config.hpp"
#include "sned/numerics/tensor.hpp"
#include "sned/subnet_spec.hpp"

namespace sned {

/// Which ratio of a SubnetSpec governs one axis of a weight array.
struct WidthVar {
  enum class Kind { Fixed, Stage, Component };
  Kind kind = Kind::Fixed;
  int index = 0;      // level for Stage, block for Component
  int component = 0;  // Component only

  static WidthVar fixed() { return {}; }
  static WidthVar stage(int level) { return {Kind::Stage, level, 0}; }
  static WidthVar comp(int block, Component c) { return {Kind::Component, block, static_cast<int>(c)}; }
  bool elastic() const { return kind != Kind::Fixed; }
  double ratio(const SubnetSpec& spec) const;
};

struct LayerDesc {
  std::string name;
  Shape shape;                  // full (ratio 1.0) shape
  std::vector<WidthVar> axes;   // one per shape axis
  int block = -1;               // owning diffusion block, -1 outside blocks
  std::optional<DropSlot> slot; // set for layers of droppable components
};

enum class BlockPath { Down, Mid, Up };

struct BlockInfo {
  std::string prefix;  // e.g. "down0.0", "mid", "up1.0"
  int level = 0;
  BlockPath path = BlockPath::Down;
};

/// Ordered layer manifest of the elastic U-Net.
class Layout {
 public:
  std::vector<LayerDesc> layers;
  std::vector<BlockInfo> blocks;

  void add(LayerDesc d);
  std::optional<int> find(const std::string& name) const;
  int index_of(const std::string& name) const;  // throws std::out_of_range
  const LayerDesc& at(const std::string& name) const { return layers[static_cast<std::size_t>(index_of(name))]; }

 private:
  std::unordered_map<std::string, int> index_;
};

Layout build_layout(const ModelConfig& config);

/// clamp(q * round_half_up(r*C/q), q, C). Ratios on the 0.1 grid are evaluated
/// exactly. Throws std::invalid_argument when r is outside [0,1].
int active_width(int full_width, double ratio, int quantum);

/// Whether a layer takes part in the subnet (its component is not dropped).
bool layer_active(const LayerDesc& layer, const SubnetSpec& spec);

/// Shape of the leading slice of `layer` under `spec`.
Shape active_shape(const LayerDesc& layer, const SubnetSpec& spec, int quantum);

/// Checks the spec's dimensions against the layout; throws std::invalid_argument.
void check_spec_dims(const ModelConfig& config, const SubnetSpec& spec);

}  // namespace sned
