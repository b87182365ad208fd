#pragma once

#include <cstdint>
#include <random>

namespace empl {

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

// Seed of sub-stream `stream` of `seed`. Chains, images and tasks each get
// their own stream so results do not depend on evaluation order.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// Deterministic random source. The engine is std::mt19937_64 (fully specified
// by the standard); uniform and Gaussian draws are computed here instead of
// through <random> distributions, whose output is library-specific.
//
//   uniform()  = (next() >> 11) * 2^-53                       in [0, 1)
//   normal()   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)           Box-Muller, one
//                                                             value per pair
//   below(n)   = rejection-sampled next() mod n               in [0, n)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double normal();
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace empl
