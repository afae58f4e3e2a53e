#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sned/data/data.hpp"
#include "sned/diffusion/diffusion.hpp"
#include "sned/model/network.hpp"

namespace sned {

/// Fixed random video feature map: three stride-2 3x3 convs applied per
/// frame, each followed by a centered 3-frame temporal mean and SiLU, then a
/// global average pool. Never trained.
struct FeatureExtractor {
  static constexpr int kDim = 64;
  static constexpr int kWidths[3] = {16, 32, 64};

  std::uint64_t seed = 0;
  int in_channels = 3;
  std::vector<Tensor<float>> weights;  // [out, in, 3, 3]
  std::vector<Tensor<float>> biases;   // [out]

  static FeatureExtractor make(std::uint64_t seed, int in_channels = 3);
};

/// videos [n,F,C,H,W] in [0,1] -> features [n, 64].
Tensor<double> extract_features(const Tensor<float>& videos, const FeatureExtractor& extractor);

/// Fréchet distance between Gaussian fits of two feature sets [n, d].
/// Singular covariances get +1e-6·I (reported through `regularized` and a
/// warning on stderr).
double frechet_distance(const Tensor<double>& a, const Tensor<double>& b, bool* regularized = nullptr);

/// Biased squared MMD with k(x,y) = (x·y/d + 1)^3. Exactly symmetric.
double kernel_distance(const Tensor<double>& a, const Tensor<double>& b);

/// One validation batch with its frozen (t, eps) draw.
struct ValBatch {
  VideoBatch batch;
  std::optional<Tensor<float>> cond;
  NoiseDraw<float> draw;
};

/// Deterministic batches of the `resolution` tier: batch b covers indices
/// [b*bs, (b+1)*bs) modulo n, noise from Rng(seed).fork(b).
std::vector<ValBatch> val_batches(const VideoDataset& val, int resolution, int n_batches, std::uint64_t seed,
                                  const NoiseSchedule& schedule, bool ssr, int batch_size = 8);

/// Mean eps-MSE over val_batches(); every subnet sees identical draws.
double subnet_val_loss(const Supernet& net, const SubnetSpec& spec, const VideoDataset& val, int n_batches,
                       std::uint64_t seed, const NoiseSchedule& schedule, int batch_size = 8);
double subnet_val_loss(const Supernet& net, const SubnetSpec& spec, const std::vector<ValBatch>& batches,
                       const NoiseSchedule& schedule);

struct Timing {
  double median_ms = 0, p10_ms = 0, p90_ms = 0;
};
void to_json(nlohmann::json& j, const Timing& t);

struct BenchOptions {
  int reps = 3;
  int warm = 1;
  int batch = 1;
  int ddim_steps = 20;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::int64_t params = 0;
  double flops = 0;           // one forward at batch 1
  double sampling_flops = 0;  // ddim_steps forwards
  Timing forward;
  Timing sampling;
};
void to_json(nlohmann::json& j, const BenchResult& r);

/// Nearest-rank percentiles of the timed runs after `warm` discarded ones.
Timing summarize_times(std::vector<double> ms);

BenchResult bench(const Supernet& net, const SubnetSpec& spec, const NoiseSchedule& schedule, const BenchOptions& opt = {});

struct ReportEntry {
  std::string model;
  std::int64_t params = 0;
  double proxy_fd = 0;
  double proxy_kd = 0;
  double val_loss = 0;
  double time_s = 0;
};
void to_json(nlohmann::json& j, const ReportEntry& e);

struct Report {
  std::vector<ReportEntry> rows;  // params descending, ties by model name
  std::string csv;
  std::string text;
  nlohmann::json json;
};

/// %.4g numeric cells; CSV quoted per RFC 4180 where needed.
Report report_table(std::vector<ReportEntry> entries);

/// Writes table.csv, table.txt and table.json into `dir`.
void write_report(const Report& report, const std::filesystem::path& dir);

}  // namespace sned
