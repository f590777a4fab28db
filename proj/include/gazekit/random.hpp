#pragma once

#include <cstdint>
#include <random>

namespace gazekit {

// Seeded generator with distribution code written out explicitly: the
// std:: distributions are implementation-defined, and every artifact this
// library writes must be byte-reproducible from its seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0, without modulo bias.
  std::uint64_t index(std::uint64_t n);

  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Counter-based child seed: streams for distinct counters are independent of
// the order in which they are consumed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter);

}  // namespace gazekit
