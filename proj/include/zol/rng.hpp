#pragma once

#include <cstdint>
#include <random>

#include "zol/core.hpp"

namespace zol {

// Per-chain random stream.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. Uniforms take the top 53 bits of one engine word; normals use
// the Marsaglia polar method (one cached value per accepted pair). Neither
// step goes through the implementation-defined <random> distributions, so a
// given seed reproduces the same stream on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream `stream` derived from a master seed via splitmix64.
  static Rng for_stream(std::uint64_t seed, std::uint64_t stream);
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1).
  double uniform_open() {
    double x;
    do {
      x = uniform();
    } while (x == 0.0);
    return x;
  }

  double normal();
  Vector normal_vector(Index dim);
  void fill_normal(Eigen::Ref<Vector> out);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace zol
