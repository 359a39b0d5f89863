#pragma once

#include <cstdint>
#include <random>

namespace tcc {

/// Seeded uniform draws with a platform-independent mapping (the standard
/// distributions are implementation defined; this one is not).
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : gen_(seed) {}

  double uniform01() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace tcc
