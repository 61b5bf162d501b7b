#pragma once

#include <cstdint>
#include <random>

namespace fedreg {

/// Named RNG streams derived from the single experiment seed.
enum class Stream : std::uint32_t {
  kInit = 1,
  kHeadInit = 2,
  kPartition = 3,
  kLocal = 4,  // batching + augmentation, keyed by (round, client)
  kSampling = 5,
  kData = 6,
};

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream, a, b). Pure function of its arguments.
Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0);

}  // namespace fedreg
