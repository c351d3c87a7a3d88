#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ctxfuse {

// Deterministic xoshiro256++ stream. Every random decision in the project is
// drawn from a stream derived from one master seed via derive_seed, so runs
// are reproducible bit-for-bit on the same binary.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // uniform double in [0, 1)
  double uniform();

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n);

  // standard normal via Box-Muller
  double normal();

  // uniform in [-limit, limit]
  double uniform_sym(double limit);

  // Fisher-Yates shuffle
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// Child seed for a named consumer ("init", "dropnet", ...).
std::uint64_t derive_seed(std::uint64_t parent, const std::string& tag);

// Child seed for a named consumer at a step/index, e.g. the drop-net draws of
// training step t. Re-deriving per step keeps resumed runs bit-exact.
std::uint64_t derive_seed(std::uint64_t parent, const std::string& tag, std::uint64_t index);

}  // namespace ctxfuse
