#include "opgran/enrich_unsup.hpp"

#include <algorithm>
#include <stdexcept>

#include "opgran/rng.hpp"

namespace opgran {

std::optional<double> next_larger(double x, std::span<const double> sorted_uniques) {
  const auto it = std::upper_bound(sorted_uniques.begin(), sorted_uniques.end(), x);
  if (it == sorted_uniques.end()) return std::nullopt;
  return *it;
}

std::vector<double> unique_with_bounds(std::span<const double> scores) {
  std::vector<double> u(scores.begin(), scores.end());
  u.push_back(0.0);
  u.push_back(1.0);
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

EnrichedScores enrich_unsupervised(std::span<const double> scores, std::uint64_t seed, ExecPolicy policy) {
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("scores must lie in [0, 1]");
  }
  EnrichedScores out;
  out.seed = seed;
  out.original.assign(scores.begin(), scores.end());
  out.enriched.resize(scores.size());
  const auto uniques = unique_with_bounds(scores);
  const auto n = static_cast<std::ptrdiff_t>(scores.size());

  auto noisy = [&](std::ptrdiff_t i) {
    const double s = out.original[static_cast<std::size_t>(i)];
    const auto upper = next_larger(s, uniques);
    const double bound = upper ? std::max(0.0, (*upper - s) - kRankGuard) : 0.0;
    Stream rng(seed, static_cast<std::uint64_t>(i), StreamDomain::enrich_unsupervised);
    out.enriched[static_cast<std::size_t>(i)] = s + rng.uniform() * bound;
  };

  if (policy == ExecPolicy::parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) noisy(i);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) noisy(i);
  }
  return out;
}

}  // namespace opgran
