#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace sned {

/// Seeded generator with platform-independent transforms (the standard
/// distributions are implementation-defined, so they are avoided here).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();

  template <typename T>
  void fill_normal(std::span<T> out, double stddev = 1.0) {
    for (auto& v : out) v = static_cast<T>(stddev * normal());
  }
  template <typename T>
  void fill_uniform(std::span<T> out, double lo, double hi) {
    for (auto& v : out) v = static_cast<T>(uniform(lo, hi));
  }

  /// Independent child stream keyed by `stream`.
  Rng fork(std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sned
