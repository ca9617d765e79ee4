#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gem {

/// Seeded pseudo-random source whose output is identical on every platform.
///
/// The standard distributions are implementation-defined, so the integer and
/// real draws here are derived directly from the 64-bit engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent per-stream seed from a root seed and a stream name.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

}  // namespace gem
