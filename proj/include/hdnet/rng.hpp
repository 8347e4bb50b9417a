#pragma once

#include <cstdint>

namespace hdnet {

// xoshiro256++ seeded through splitmix64. Self-contained so that streams are
// identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n), n > 0.
  int uniform_int(int n);

  // Exact Poisson sample: sequential inversion for small means, Hormann's
  // PTRS transformed rejection for large ones.
  std::int64_t poisson(double mean);

 private:
  std::uint64_t state_[4];
};

}  // namespace hdnet
