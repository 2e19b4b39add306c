#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "json.hpp"

#include "opgran/exec.hpp"
#include "opgran/metrics.hpp"

namespace opgran {

inline constexpr double kDefaultResolution = 1e-4;

/// Operational granularity of a set of axis projections in [0, 1].
///
/// Returns the smallest cell size s in {r, 2r, ..., 1} (r = resolution) such
/// that with K = ceil(1/s) cells, and each point assigned to cell
/// min(floor(p/s), K-1), every cell is occupied. The final cell is clamped so
/// p = 1 lands in it. Returns nullopt for an empty set.
///
/// Arithmetic runs in whole resolution units: 1/resolution must be an integer
/// (within 1e-6), and p/r is snapped to the nearest integer when within 1e-7
/// of it, so decimal inputs such as 0.3 at s = 0.1 land in cell 3.
///
/// Throws std::invalid_argument for a bad resolution or points outside [0, 1].
std::optional<double> granularity(std::span<const double> points, double resolution = kDefaultResolution,
                                  ExecPolicy policy = ExecPolicy::parallel);

struct GranularityReport {
  std::optional<double> g_precision;
  std::optional<double> g_recall;
  std::optional<double> g_fpr;
  std::size_t cardinality = 0;
  double resolution = kDefaultResolution;
};

/// Granularity of the axes a single curve carries: precision and recall for
/// PR, fpr for ROC. The other axes stay empty. Cardinality is left at zero
/// because a curve does not retain its generating scores.
GranularityReport curve_granularity(const OperatingCurve& curve, double resolution = kDefaultResolution,
                                    ExecPolicy policy = ExecPolicy::parallel);

/// All three axes plus the score cardinality, from the dataset's PR and ROC curves.
GranularityReport curve_granularity(const ScoredDataset& data, double resolution = kDefaultResolution,
                                    ExecPolicy policy = ExecPolicy::parallel);

/// JSON object with g_precision, g_recall, g_fpr (null when undefined),
/// cardinality and resolution.
nlohmann::json granularity_to_json(const GranularityReport& report);

namespace detail {
/// Number of resolution steps in the unit interval; throws when not integral.
std::int64_t resolution_steps(double resolution);
}  // namespace detail

}  // namespace opgran
