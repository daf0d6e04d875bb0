#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "embridge/common.hpp"

namespace embridge::rng {

// splitmix64 finalizer; whitens structured seeds before they reach mt19937_64
std::uint64_t mix(std::uint64_t x);

std::uint64_t hash_tag(std::string_view tag);

// Independent, reproducible substream addressed by (seed, tag, index).
// Parallel work items draw from their own stream so scheduling order
// never changes the results.
std::mt19937_64 stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

// Uniform double in [0, 1) with 53 random bits.
double uniform(std::mt19937_64& eng);

// Uniform in [lo, hi).
double uniform(std::mt19937_64& eng, double lo, double hi);

// Standard normal via Box-Muller. std::normal_distribution is
// implementation-defined, which would break cross-platform manifests.
double normal(std::mt19937_64& eng);

// CSCG sample with E[|z|^2] = variance.
cplx cnormal(std::mt19937_64& eng, double variance = 1.0);

} // namespace embridge::rng
