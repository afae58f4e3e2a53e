#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "sned/data/data.hpp"
#include "sned/diffusion/diffusion.hpp"
#include "sned/model/checkpoint.hpp"
#include "sned/searchspace/searchspace.hpp"

namespace sned {

struct TrainConfig {
  std::int64_t total_iterations = 2000;
  double learning_rate = 1e-4;
  int batch_size = 8;
  WarmupSchedule warmup;
  double ema_decay = 0.999;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::int64_t log_every = 10;

  std::vector<std::string> problems() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Adam moments congruent to the supernet plus per-element step counts.
struct OptimizerState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::vector<std::vector<std::uint32_t>> steps;

  static OptimizerState zeros_like(const Supernet& net);
};

struct EmaState {
  std::vector<Tensor<float>> shadow;
  double decay = 0.999;

  static EmaState from(const Supernet& net, double decay);
};

/// shadow <- decay*shadow + (1-decay)*weights over every element.
void ema_update(EmaState& ema, const Supernet& net, double decay);

/// Network carrying the EMA shadow weights.
Supernet ema_network(const Supernet& net, const EmaState& ema);

/// Everything a training step needs besides mutable state.
struct TrainContext {
  const VideoDataset& dataset;
  const SearchSpaceConfig& search;
  const TrainConfig& train;
  const NoiseSchedule& schedule;
};

struct StepReport {
  double loss = 0;
  SubnetSpec spec;
  double param_fraction = 0;
  double ms = 0;
};

/// Mutable per-run state: RNG streams and per-resolution batch streams.
class TrainSession {
 public:
  TrainSession(const TrainContext& ctx, const Supernet& net);

  StepReport step(Supernet& net, OptimizerState& opt, EmaState& ema, std::int64_t iteration);

  /// Loss of `weights` (normally the EMA network) on the fixed probe spec, batch and noise.
  double probe_loss(const Supernet& weights) const;
  const SubnetSpec& probe_spec() const { return probe_spec_; }

 private:
  TrainContext ctx_;
  std::int64_t full_params_;
  Rng spec_rng_;
  Rng noise_rng_;
  std::map<int, BatchStream> streams_;
  std::vector<double> bc1_, bc2_;
  SubnetSpec probe_spec_;
  VideoBatch probe_batch_;
  std::optional<Tensor<float>> probe_cond_;
  NoiseDraw<float> probe_draw_;
};

/// Gradient step on one sampled subnet; elements outside its slices (weights
/// and moments) are never touched. Throws NumericError naming the spec when
/// the loss is not finite.
StepReport train_step(Supernet& net, OptimizerState& opt, EmaState& ema, TrainSession& session, std::int64_t iteration);

struct TrainResult {
  OptimizerState optimizer;
  EmaState ema;
  std::vector<nlohmann::json> log;  // iter, res, param_fraction, loss, probe_ema_loss, wall_ms
  std::vector<double> losses;       // every iteration
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint_dir;  // weights.snw, optimizer.snw, ema.snw
  std::optional<std::filesystem::path> metrics_log;     // JSON lines
  std::function<void(const nlohmann::json&)> on_log;    // optional progress hook
};

TrainResult train(Supernet& net, const TrainContext& ctx, const TrainOutputs& outputs = {});

void save_training_state(const std::filesystem::path& dir, const Supernet& net, const OptimizerState& opt, const EmaState& ema);
void load_training_state(const std::filesystem::path& dir, Supernet& net, OptimizerState& opt, EmaState& ema);

struct ExtractedSubnet {
  Supernet network;  // reduced shapes, dropped components absent
  SubnetSpec native; // all ratios 1.0, source drop mask and resolution
};

/// Copies exactly the active slices of `spec`. With a search config the spec
/// is also checked against validate().
ExtractedSubnet extract_subnet(const Supernet& net, const SubnetSpec& spec, const SearchSpaceConfig* search = nullptr);

}  // namespace sned
