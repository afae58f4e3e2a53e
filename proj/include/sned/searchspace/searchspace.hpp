#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "sned/model/config.hpp"
#include "sned/numerics/rng.hpp"
#include "sned/subnet_spec.hpp"

namespace sned {

struct SearchSpaceConfig {
  std::vector<double> ratio_set = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> resolutions = {16, 32, 64};
  std::map<int, double> resolution_caps = {{16, 1.0}, {32, 1.0}, {64, 0.7}};
  std::vector<DropSlot> droppable = {DropSlot::TemporalAttention, DropSlot::CrossAttention, DropSlot::SpatialAttention};

  double cap(int resolution) const;  // 1.0 when absent
  std::vector<std::string> problems() const;
  void validate() const;  // throws std::invalid_argument
};

struct WarmupSchedule {
  std::int64_t total_warmup_iterations = 30000;
  std::int64_t step_length = 5000;
  double start_fraction = 1.0;
  double end_fraction = 0.4;
};

void to_json(nlohmann::json& j, const SearchSpaceConfig& c);
void from_json(const nlohmann::json& j, SearchSpaceConfig& c);
void to_json(nlohmann::json& j, const WarmupSchedule& w);
void from_json(const nlohmann::json& j, WarmupSchedule& w);

/// Stepwise floor: max(end, start - 0.1*floor(iteration/step_length)).
double min_fraction(const WarmupSchedule& schedule, std::int64_t iteration);

/// Dimensions of a search space. Real models use 5 ratio slots per block; micro
/// spaces for brute-force checks may use fewer (unused slots must stay 1.0).
struct SpaceShape {
  int stages = 0;
  int blocks = 0;
  int ratio_slots = kComponentsPerBlock;
  bool has_temporal = true;
};

SpaceShape space_shape(const ModelConfig& model);

/// Droppable slots that exist in this model (temporal needs a temporal model).
std::vector<DropSlot> droppable_slots(const SearchSpaceConfig& config, const SpaceShape& shape);

/// Largest admissible spec at a resolution: ratios 1.0, stage ratios capped.
SubnetSpec full_spec(const SearchSpaceConfig& config, const ModelConfig& model, int resolution);

SubnetSpec sample_subnet(Rng& rng, const SearchSpaceConfig& config, const WarmupSchedule& schedule,
                         std::int64_t iteration, const ModelConfig& model);

/// Violations (empty = ok). Never throws.
std::vector<std::string> validate(const SubnetSpec& spec, const SearchSpaceConfig& config, const SpaceShape& shape);
std::vector<std::string> validate(const SubnetSpec& spec, const SearchSpaceConfig& config, const ModelConfig& model);

using BigInt = boost::multiprecision::cpp_int;

/// Exact number of valid specs.
BigInt enumerate_count(const SearchSpaceConfig& config, const SpaceShape& shape);
BigInt enumerate_count(const SearchSpaceConfig& config, const ModelConfig& model);

struct CostStats {
  double min = 0, max = 0, mean = 0;
  std::vector<double> deciles;  // 10%, 20%, ..., 90% (nearest rank)
};

struct CostSummary {
  int samples = 0;
  std::int64_t full_params = 0;
  CostStats params;
  CostStats flops;
  CostStats param_fraction;
};

/// Samples at `iteration` (default: search space fully open), validates, costs.
CostSummary cost_histogram(const SearchSpaceConfig& config, const ModelConfig& model, int n_samples,
                           std::uint64_t seed, const WarmupSchedule& schedule = {},
                           std::int64_t iteration = 1000000);

void to_json(nlohmann::json& j, const CostStats& s);
void to_json(nlohmann::json& j, const CostSummary& s);

}  // namespace sned
