#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace opgran {

// Domain tags keep streams for different purposes independent even when
// they share a seed and a key.
enum class StreamDomain : std::uint64_t {
  enrich_unsupervised = 1,
  enrich_supervised = 2,
  simulate = 3,
  train_init = 4,
  train_shuffle = 5,
  train_noise = 6,
  validation_noise = 7,
  subsample = 8,
  gateway = 9,
  split = 10,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// FNV-1a 64-bit hash; used to key streams by record id.
std::uint64_t hash_key(std::string_view text) noexcept;

/// Counter-based random stream keyed by (seed, key, domain).
///
/// The state is derived from the key tuple alone, so item i of a loop gets the
/// same numbers regardless of iteration order or thread count. Successive
/// draws are SplitMix64 outputs. Normal deviates use Box-Muller rather than
/// std::normal_distribution so results do not depend on the standard library.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t seed, std::uint64_t key, StreamDomain domain) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;

  /// Standard normal deviate.
  double normal() noexcept;

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept;

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace opgran
