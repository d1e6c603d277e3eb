#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace kt::num {

// xoshiro256** seeded through splitmix64. Output depends only on the seed, so
// sequences are reproducible across runs and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double normal();

  // Independent stream keyed by name, e.g. root.derive("dataset").
  Rng derive(std::string_view name) const;
  Rng derive(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t hash_name(std::string_view name);

}  // namespace kt::num
