#pragma once

#include <cstdint>
#include <random>

namespace noisefed {

/// splitmix64 finalizer; the mixing step used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the stream for (site, step) under `base`. Distinct (site, step)
/// pairs map to distinct, decorrelated seeds.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t site,
                                    std::uint64_t step = 0) {
  return mix64(mix64(mix64(base) ^ (site + 0x632be59bd9b4e019ULL)) ^
               (step + 0x85157af5a1a2d3c9ULL));
}

/// Seeded deterministic generator. Value type: copying a stream forks its
/// state, so a copy replays the same sequence.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  static RngStream child(std::uint64_t base, std::uint64_t site,
                         std::uint64_t step = 0) {
    return RngStream(derive_seed(base, site, step));
  }

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }
  double normal(double sigma) { return sigma * normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// +1 or -1 with equal probability.
  int sign() { return (engine_() >> 63) != 0 ? 1 : -1; }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace noisefed
