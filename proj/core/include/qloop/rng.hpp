// SPDX-License-Identifier: Apache-2.0
//
// Reproducible random streams. Fixed algorithm for this release:
//   * generator core: xoshiro256++ seeded through SplitMix64
//   * substreams: child key = SplitMix64 finalizer over (parent key,
//     FNV-1a(name), index); disjoint for distinct (name, index)
//   * uniforms use the top 53 bits; gaussians are Box-Muller (cosine
//     branch), consuming exactly two 64-bit words per draw
// Draws are bit-reproducible for a given seed and derivation path.
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace qloop {

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  /// Deterministic child stream; independent of draws made on the parent.
  RngStream substream(std::string_view name, std::uint64_t index = 0) const;

  std::uint64_t next_u64();
  double next_double();            // uniform on [0, 1)
  double next_gaussian();          // standard normal
  bool next_bernoulli(double p);   // true with probability p

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::array<std::uint64_t, 4> state_;
};

}  // namespace qloop
