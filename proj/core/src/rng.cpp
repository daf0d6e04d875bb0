#include "embridge/rng.hpp"

#include <cmath>

namespace embridge::rng {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t hash_tag(std::string_view tag) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::mt19937_64 stream(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  std::uint64_t s = mix(seed ^ mix(hash_tag(tag) + 0x632be59bd9b4e019ull * index));
  return std::mt19937_64(s);
}

double uniform(std::mt19937_64& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform(eng);
}

double normal(std::mt19937_64& eng) {
  // Box-Muller; u1 kept away from 0 so the log stays finite
  double u1 = 0.0;
  do {
    u1 = uniform(eng);
  } while (u1 <= 0.0);
  double u2 = uniform(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

cplx cnormal(std::mt19937_64& eng, double variance) {
  double s = std::sqrt(variance / 2.0);
  double re = normal(eng);
  double im = normal(eng);
  return cplx(s * re, s * im);
}

} // namespace embridge::rng
