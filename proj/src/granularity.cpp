#include "opgran/granularity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace opgran {

namespace detail {

std::int64_t resolution_steps(double resolution) {
  if (!(resolution > 0.0) || resolution > 1.0) {
    throw std::invalid_argument("resolution must lie in (0, 1]");
  }
  const double steps = 1.0 / resolution;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-6 * std::max(1.0, rounded)) {
    throw std::invalid_argument("1/resolution must be an integer");
  }
  return static_cast<std::int64_t>(rounded);
}

}  // namespace detail

namespace {

// Point positions in resolution units, sorted and deduplicated.
std::vector<double> to_units(std::span<const double> points, std::int64_t steps) {
  std::vector<double> units;
  units.reserve(points.size());
  for (double p : points) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("granularity points must lie in [0, 1]");
    double q = p * static_cast<double>(steps);
    const double r = std::round(q);
    if (std::abs(q - r) < 1e-7) q = r;
    units.push_back(q);
  }
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());
  return units;
}

// Cell size k units: every cell index in [0, K) must be hit. Points are sorted
// so cell indices are non-decreasing; coverage means the walk starts at 0,
// ends at K-1 and never skips an index.
bool covers(const std::vector<double>& units, std::int64_t steps, std::int64_t k) {
  const std::int64_t cells = (steps + k - 1) / k;
  if (static_cast<std::int64_t>(units.size()) < cells) return false;
  const double width = static_cast<double>(k);
  std::int64_t prev = -1;
  for (double u : units) {
    auto c = static_cast<std::int64_t>(std::floor(u / width));
    c = std::min(c, cells - 1);
    if (c > prev + 1) return false;
    prev = c;
  }
  return prev == cells - 1;
}

}  // namespace

std::optional<double> granularity(std::span<const double> points, double resolution, ExecPolicy policy) {
  const std::int64_t steps = detail::resolution_steps(resolution);
  if (points.empty()) return std::nullopt;
  const auto units = to_units(points, steps);
  // With m distinct points at most m cells can be covered, so cell sizes
  // giving more than m cells are skipped outright.
  const auto m = static_cast<std::int64_t>(units.size());
  const std::int64_t k_start = (steps + m - 1) / m;

  std::int64_t best = steps;  // k = steps (one cell) always covers
  if (policy == ExecPolicy::serial) {
    for (std::int64_t k = k_start; k < steps; ++k) {
      if (covers(units, steps, k)) {
        best = k;
        break;
      }
    }
  } else {
    // Scan in blocks so the search can stop at the first block with a hit.
    constexpr std::int64_t kBlock = 512;
    for (std::int64_t lo = k_start; lo < steps && best == steps; lo += kBlock) {
      const std::int64_t hi = std::min(lo + kBlock, steps);
      std::int64_t found = steps;
#pragma omp parallel for reduction(min : found) schedule(static)
      for (std::int64_t k = lo; k < hi; ++k) {
        if (k < found && covers(units, steps, k)) found = std::min(found, k);
      }
      best = std::min(best, found);
    }
  }
  return static_cast<double>(best) / static_cast<double>(steps);
}

namespace {

std::vector<double> project(const OperatingCurve& curve, bool x_axis) {
  std::vector<double> out;
  out.reserve(curve.points.size());
  for (const auto& p : curve.points) out.push_back(x_axis ? p.x : p.y);
  return out;
}

}  // namespace

GranularityReport curve_granularity(const OperatingCurve& curve, double resolution, ExecPolicy policy) {
  GranularityReport report;
  report.resolution = resolution;
  if (curve.space == CurveSpace::PR) {
    report.g_recall = granularity(project(curve, true), resolution, policy);
    report.g_precision = granularity(project(curve, false), resolution, policy);
  } else {
    report.g_fpr = granularity(project(curve, true), resolution, policy);
  }
  return report;
}

GranularityReport curve_granularity(const ScoredDataset& data, double resolution, ExecPolicy policy) {
  const auto pr = curve_granularity(build_curve(data, CurveSpace::PR), resolution, policy);
  const auto roc = curve_granularity(build_curve(data, CurveSpace::ROC), resolution, policy);
  GranularityReport report;
  report.resolution = resolution;
  report.g_precision = pr.g_precision;
  report.g_recall = pr.g_recall;
  report.g_fpr = roc.g_fpr;
  report.cardinality = cardinality(data.scores());
  return report;
}

nlohmann::json granularity_to_json(const GranularityReport& report) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"g_precision", opt(report.g_precision)},
          {"g_recall", opt(report.g_recall)},
          {"g_fpr", opt(report.g_fpr)},
          {"cardinality", report.cardinality},
          {"resolution", report.resolution}};
}

}  // namespace opgran
