#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "opgran/exec.hpp"

namespace opgran {

inline constexpr double kRankGuard = 1e-9;

struct EnrichedScores {
  std::vector<double> original;
  std::vector<double> enriched;
  std::uint64_t seed = 0;
};

/// Smallest element of `sorted_uniques` strictly greater than x.
std::optional<double> next_larger(double x, std::span<const double> sorted_uniques);

/// Sorted unique values of `scores` together with 0 and 1.
std::vector<double> unique_with_bounds(std::span<const double> scores);

/// Rank-preserving uniform noise.
///
/// Each score s gets s + U(0, max(0, next_larger(s) - s - 1e-9)), where
/// next_larger ranges over the unique scores plus {0, 1}. Scores never
/// decrease, and a score of 1 is unchanged. The noise for item i comes from
/// the stream keyed by (seed, i), so serial and parallel runs agree bit for bit.
EnrichedScores enrich_unsupervised(std::span<const double> scores, std::uint64_t seed,
                                   ExecPolicy policy = ExecPolicy::parallel);

}  // namespace opgran
