#pragma once

#include <cstdint>

namespace polymhe {

// Counter-based Gaussian generator. Every draw is keyed by
// (seed, trial, step, channel), so streams are reproducible and
// independent of evaluation order or thread scheduling.
//
// Draws are clamped to +-6 standard deviations so that disturbance
// sequences are bounded sets in the strict sense.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Standard normal, truncated to [-6, 6].
  double normal(std::uint64_t trial, std::uint64_t step,
                std::uint64_t channel) const;

  // Uniform in [0, 1).
  double uniform(std::uint64_t trial, std::uint64_t step,
                 std::uint64_t channel) const;

 private:
  std::uint64_t seed_;
};

}  // namespace polymhe
