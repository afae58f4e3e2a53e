#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sned/numerics/rng.hpp"
#include "sned/numerics/tensor.hpp"

namespace sned {

class CaptionVocab {
 public:
  CaptionVocab();  // the fixed synthetic vocabulary
  explicit CaptionVocab(std::vector<std::string> tokens);

  const std::vector<std::string>& tokens() const { return tokens_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // throws std::out_of_range
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  static const std::vector<std::string>& colors();
  static const std::vector<std::string>& shapes();
  static const std::vector<std::string>& motions();

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline constexpr int kCaptionLength = 5;  // "a <color> <shape> moving <motion>"

struct VideoDataset {
  int n = 0;
  int frames = 0;
  int channels = 3;
  int max_resolution = 0;
  CaptionVocab vocab;
  std::vector<int> captions;                 // n * kCaptionLength
  std::map<int, Tensor<float>> tiers;        // resolution -> [n,F,C,r,r]

  const Tensor<float>& tier(int resolution) const;  // throws std::out_of_range naming the tier
  std::vector<std::string> caption_words(int index) const;
};

/// Moving-shape videos at max_resolution (the master tier).
VideoDataset gen_synthetic(int n, int frames, int max_resolution, std::uint64_t seed);

/// Adds tiers resized from the master with antialiased bilinear filtering.
void build_tiers(VideoDataset& dataset, const std::vector<int>& resolutions);

/// SNV1 errors, each failure mode with its own kind.
class SnvError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, TruncatedPayload, SizeMismatch, Malformed };
  SnvError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// One tier per file (resolution must exist in dataset).
void write_snv(const VideoDataset& dataset, int resolution, const std::filesystem::path& path);
/// A dataset holding the single tier stored in the file.
VideoDataset read_snv(const std::filesystem::path& path);

/// Writes every tier to dir/tier_<r>.snv.
void write_tiers(const VideoDataset& dataset, const std::filesystem::path& dir);
/// Reads dir/tier_<r>.snv for the requested resolutions into one dataset.
VideoDataset read_tiers(const std::filesystem::path& dir, const std::vector<int>& resolutions);
std::filesystem::path tier_path(const std::filesystem::path& dir, int resolution);

struct VideoBatch {
  Tensor<float> videos;               // [B,F,C,r,r]
  std::vector<int> captions;          // B * kCaptionLength
  std::vector<int> indices;           // dataset rows
  std::optional<Tensor<float>> low;   // [B,F,C,r/2,r/2] for SSR pairing
};

/// Epoch-wise shuffled batches; the final batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(const VideoDataset& dataset, int resolution, int batch_size, std::uint64_t seed, bool ssr_pairs = false);
  VideoBatch next();
  std::int64_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  const VideoDataset* data_;
  int resolution_;
  int batch_size_;
  Rng rng_;
  bool ssr_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
  std::int64_t epoch_ = -1;
};

VideoBatch gather_batch(const VideoDataset& dataset, int resolution, const std::vector<int>& indices, bool ssr_pairs);

}  // namespace sned
