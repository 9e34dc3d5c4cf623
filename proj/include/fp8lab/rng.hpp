// SPDX-License-Identifier: Apache-2.0
//
// Counter-style deterministic RNG. Every random draw in the project is a
// pure function of (seed, stream tag, index), which makes runs
// reproducible byte-for-byte and checkpoints resumable without carrying
// generator state around.

#pragma once

#include <cstdint>
#include <string_view>

namespace fp8lab {

// splitmix64 step
std::uint64_t splitmix64(std::uint64_t& state);

// Derive an independent stream seed from a run seed and a label.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view tag,
                          std::uint64_t index = 0);

class Prng {
 public:
  explicit Prng(std::uint64_t seed) : state_(seed) {}
  Prng(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
      : state_(stream_seed(seed, tag, index)) {}

  std::uint64_t next_u64() { return splitmix64(state_); }
  // uniform in [0, 1)
  double next_unit();
  // uniform in [lo, hi)
  double next_uniform(double lo, double hi);
  // standard normal (Box-Muller, pair cached)
  double next_normal();
  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fp8lab
