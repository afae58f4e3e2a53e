#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sned/diffusion/diffusion.hpp"
#include "sned/searchspace/searchspace.hpp"
#include "sned/trainer/trainer.hpp"

namespace sned {

/// Bad configuration, flags or specs: the CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DiffusionSettings {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int ddim_steps = 20;
};

struct DataSettings {
  int n = 512;
  int frames = 4;
  int max_resolution = 64;
  std::uint64_t seed = 0;
};

struct EvalSettings {
  std::uint64_t feature_seed = 0;
  int n_eval = 64;
  int reps = 3;
};

struct PathSettings {
  std::string dataset = "run/data";
  std::string checkpoints = "run/checkpoints";
  std::string reports = "run/reports";
};

/// Everything one CLI invocation needs. Defaults are the toy configuration.
struct RunConfig {
  ModelConfig model;
  SearchSpaceConfig search;
  TrainConfig train;
  DiffusionSettings diffusion;
  DataSettings data;
  EvalSettings eval;
  PathSettings paths;

  static RunConfig toy();

  /// Resolutions present in the dataset: max_resolution halved down to
  /// half the smallest search resolution (SSR conditioning).
  std::vector<int> data_tiers() const;
  NoiseSchedule schedule() const;

  std::vector<std::string> problems() const;
  void validate() const;  // throws ValidationError
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Toy defaults, deep-merged with `file` (if any), then `--key.path=value`
/// overrides. Unknown keys and bad values raise ValidationError.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

/// Named sizes: stage ratios (uniform, from the ratio set, capped at the
/// resolution) whose parameter fraction is nearest the target.
struct Preset {
  char name;
  double target;
};
inline constexpr Preset kPresets[] = {{'S', 0.4}, {'M', 0.6}, {'L', 0.8}, {'B', 1.0}};

SubnetSpec preset_spec(char name, const SearchSpaceConfig& search, const ModelConfig& model, int resolution);

}  // namespace sned
