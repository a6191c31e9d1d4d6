#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fpt {

/// Seeded generator with platform-independent uniform/normal draws (the std
/// distributions are implementation-defined, the engine is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Independent stream for a named purpose, e.g. Rng::stream(seed, "st.0.q.weight").
  static Rng stream(std::uint64_t seed, std::string_view tag);

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);

}  // namespace fpt
