#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace llmscale {

/// Seeded generator whose output is identical on every platform: the engine
/// is mt19937_64 and all distributions are computed here rather than through
/// the implementation-defined <random> distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal (Box-Muller).
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Seed for a named pipeline stage. Adding a new stage name never changes
/// the seeds already handed out to other names.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);

}  // namespace llmscale
