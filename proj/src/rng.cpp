#include "polymhe/rng.hpp"

#include <cmath>

namespace polymhe {
namespace {

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t key_of(std::uint64_t seed, std::uint64_t trial,
                     std::uint64_t step, std::uint64_t channel) {
  std::uint64_t h = mix(seed);
  h = mix(h ^ trial);
  h = mix(h ^ step);
  h = mix(h ^ channel);
  return h;
}

double to_unit(std::uint64_t bits) {
  // 53 mantissa bits -> [0, 1)
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace

double CounterRng::uniform(std::uint64_t trial, std::uint64_t step,
                           std::uint64_t channel) const {
  return to_unit(key_of(seed_, trial, step, channel));
}

double CounterRng::normal(std::uint64_t trial, std::uint64_t step,
                          std::uint64_t channel) const {
  const std::uint64_t h = key_of(seed_, trial, step, channel);
  const double u1 = to_unit(h);
  const double u2 = to_unit(mix(h ^ 0xd1b54a32d192ed03ull));
  // Box-Muller; u1 shifted away from 0 to keep the log finite.
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  const double z = r * std::cos(2.0 * M_PI * u2);
  if (z > 6.0) return 6.0;
  if (z < -6.0) return -6.0;
  return z;
}

}  // namespace polymhe
