#include "fedreg/rng.hpp"

namespace fedreg {

Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t a, std::uint64_t b) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), static_cast<std::uint32_t>(stream),
                    lo(a),    hi(a),    lo(b),
                    hi(b)};
  return Rng(seq);
}

}  // namespace fedreg
