#pragma once

#include <cmath>
#include <cstdint>

namespace cmlab {

// Counter-seeded generator: a stream is addressed by (master seed, stream
// index), so parallel workers derive disjoint streams without shared state.
// Uniform and normal deviates are produced by a fixed, platform-independent
// recipe (splitmix64 + Box-Muller), which keeps sampled trajectories
// bit-reproducible from (seed, stream) alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static Rng for_stream(std::uint64_t master, std::uint64_t stream) {
    return Rng(mix(mix(master) + kGamma * (stream + 1)));
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // uniform on (0, 1]
  double next_unit() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // standard normal via Box-Muller; the second deviate of a pair is cached
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr double kPi = 3.14159265358979323846;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cmlab
