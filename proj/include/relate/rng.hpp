#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace relate {

/// Seeded random source shared by every sampler in the project.
///
/// All draws are derived from the raw 64-bit engine output with fixed
/// arithmetic, so a given seed produces the same stream on every platform
/// (std::uniform_real_distribution and friends are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream for item `index` of a job seeded with `seed`.
  static Rng for_stream(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi], inclusive; unbiased.
  int uniform_int(int lo, int hi);
  /// Standard normal (Box-Muller).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::string serialize() const;
  static Rng deserialize(std::string_view text);

  friend bool operator==(const Rng& a, const Rng& b);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace relate
