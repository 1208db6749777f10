#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

namespace mvr {

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic random source. The engine is mt19937_64 (its output sequence
// is pinned by the standard); every distribution on top is hand-rolled here
// because std::uniform_real_distribution & friends are implementation-defined
// and would break bitwise reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t next_below(std::uint64_t n);

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Inclusive bounds.
  int uniform_int(int lo, int hi);

  // Standard normal via Box-Muller (the cached spare keeps draw parity
  // deterministic).
  double normal();

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Purpose tags for derived substreams. Values are part of the reproducibility
// contract: renumbering them changes every downstream stream.
enum class Stream : std::uint64_t {
  param_init = 1,
  image_mask = 2,
  point_mask = 3,
  ray_select = 4,
  ray_points = 5,
  scene_pick = 6,
  heldout = 7,
  scene_gen = 8,
  test = 9000,
};

// Independent substream for (seed, purpose, a, b, c). Tags are folded through
// splitmix64 so nearby tuples land far apart in seed space.
Rng derive_rng(std::uint64_t seed, Stream purpose, std::uint64_t a = 0,
               std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace mvr
