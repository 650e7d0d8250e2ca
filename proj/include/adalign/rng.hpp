#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace adalign {

// splitmix64 finalizer, used to mix seeds and stream names into mt19937_64
// seeds. Cheap and well distributed; good enough for seed derivation.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_name(std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// A named, indexed random stream derived from one master seed. Every consumer
// (env, init, rollout, buffer, league cells, ...) gets its own stream so
// results do not depend on scheduling or on unrelated draws.
//
// uniform() and normal() are pinned implementations (53-bit ldexp uniform,
// Box-Muller without caching) rather than std distributions, whose exact
// output the standard leaves unspecified.
class RngStream {
 public:
  RngStream(uint64_t master_seed, std::string_view name, uint64_t a = 0,
            uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = mix64(master_seed ^ hash_name(name));
    s = mix64(s ^ mix64(a + 0x1ULL));
    s = mix64(s ^ mix64(b + 0x2ULL));
    s = mix64(s ^ mix64(c + 0x3ULL));
    gen_.seed(s);
  }

  uint64_t bits() { return gen_(); }

  // Uniform on [0, 1) with 53 bits of mantissa.
  double uniform() { return std::ldexp(static_cast<double>(bits() >> 11), -53); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. The second variate is discarded to keep
  // the draw count per call fixed.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n).
  uint64_t randint(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = bits();
    while (x >= limit) x = bits();
    return x % n;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace adalign
