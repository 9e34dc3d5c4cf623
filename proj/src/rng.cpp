// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/rng.hpp"

#include <cmath>
#include <numbers>

namespace fp8lab {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::string_view tag,
                          std::uint64_t index) {
  // FNV-1a over the tag, then splitmix to decorrelate
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : tag) {
    h ^= std::uint64_t(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  std::uint64_t s = seed ^ h;
  splitmix64(s);
  s ^= index * 0x9e3779b97f4a7c15ull;
  splitmix64(s);
  return s;
}

double Prng::next_unit() {
  return double(next_u64() >> 11) * 0x1p-53;
}

double Prng::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_unit();
}

double Prng::next_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = next_unit();
  while (u1 <= 0.0) u1 = next_unit();
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t Prng::next_below(std::uint64_t n) {
  if (n == 0) return 0;
  // rejection sampling to stay unbiased
  const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace fp8lab
