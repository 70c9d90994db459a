// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace ehcusum {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// xoshiro256** generator satisfying UniformRandomBitGenerator.
///
/// Streams are cheap to construct, so every Monte Carlo replication owns a
/// fresh one keyed by (master seed, replication index, lane). Results then
/// depend only on those keys and not on how replications are scheduled.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Stream(std::uint64_t seed) noexcept {
    for (auto& word : state_) word = detail::splitmix64(seed);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  friend constexpr bool operator==(const Stream&, const Stream&) = default;

 private:
  std::array<std::uint64_t, 4> state_{};
};

/// Independent lanes of one replication. Observations and gating draw from
/// separate lanes so that changing the gate process never perturbs the
/// observation sequence.
enum class Lane : std::uint64_t { observations = 0, gates = 1, aux = 2 };

constexpr Stream derive_stream(std::uint64_t master_seed, std::uint64_t index,
                               Lane lane = Lane::observations) noexcept {
  std::uint64_t mix = master_seed;
  std::uint64_t key = detail::splitmix64(mix);
  mix = key ^ (index * 0xd1342543de82ef95ULL);
  key = detail::splitmix64(mix);
  mix = key ^ (static_cast<std::uint64_t>(lane) + 0x632be59bd9b4e019ULL);
  return Stream{detail::splitmix64(mix)};
}

}  // namespace ehcusum
