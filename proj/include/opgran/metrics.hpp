#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "opgran/exec.hpp"

namespace opgran {

/// Binary labels with positive-class scores in [0, 1]. Construction validates.
class ScoredDataset {
 public:
  /// Throws DataError("empty dataset") when empty, std::invalid_argument on
  /// length mismatch, non-binary labels or scores outside [0, 1].
  ScoredDataset(std::vector<int> labels, std::vector<double> scores);

  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<double>& scores() const noexcept { return scores_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t positives() const noexcept { return positives_; }
  std::size_t negatives() const noexcept { return labels_.size() - positives_; }

 private:
  std::vector<int> labels_;
  std::vector<double> scores_;
  std::size_t positives_ = 0;
};

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// A record is predicted positive iff its score is strictly greater than th.
ConfusionMatrix confusion_at_threshold(const ScoredDataset& data, double th);

enum class CurveSpace { PR, ROC };

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;  // recall (PR) or fpr (ROC)
  double y = 0.0;  // precision (PR) or tpr (ROC)
  ConfusionMatrix counts;
};

/// Operating points ordered by strictly decreasing threshold.
///
/// One point per unique score plus two sentinels: max(score) + 1 yields the
/// all-negative point and min(score) - 1 the all-positive point. Precision
/// with no predicted positives is 1.
struct OperatingCurve {
  CurveSpace space = CurveSpace::ROC;
  std::vector<CurvePoint> points;
};

/// Throws DataError("no positive labels") for PR without positives and
/// DataError("degenerate class distribution") for ROC with a missing class.
OperatingCurve build_curve(const ScoredDataset& data, CurveSpace space);

/// Tie-corrected rank statistic (Mann-Whitney U / (P*N)).
/// Throws DataError("degenerate class distribution") on single-class data.
double auroc(const ScoredDataset& data);

/// Trapezoid area under a ROC curve, integrated along increasing fpr.
double trapezoid_area(const OperatingCurve& roc);

enum class PraucMethod { trapezoid, average_precision };

/// Area under the PR curve. Trapezoid interpolates linearly between points,
/// which over-estimates on low-cardinality scores; average precision is the
/// step-wise sum over recall increments.
double prauc(const ScoredDataset& data, PraucMethod method = PraucMethod::trapezoid);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double empirical_positive_rate = 0.0;
  std::size_t count = 0;
};

struct ReliabilityReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
};

/// Equal-width binning of the positive-class score; the last bin is closed at 1.
ReliabilityReport ece(const ScoredDataset& data, std::size_t n_bins = 10);

inline constexpr double kKdeBandwidthFloor = 1e-3;

/// Scott's rule with population standard deviation, floored at 1e-3.
double scott_bandwidth(std::span<const double> points);

/// Gaussian kernel density of `points` evaluated at every grid value.
std::vector<double> kde_density(std::span<const double> points, std::span<const double> grid,
                                ExecPolicy policy = ExecPolicy::parallel);

/// Number of distinct values under exact equality.
std::size_t cardinality(std::span<const double> scores);

// Serialization: JSON array of {threshold, x, y}; CSV with header threshold,x,y.
nlohmann::json curve_to_json(const OperatingCurve& curve);
std::string curve_to_csv(const OperatingCurve& curve);
nlohmann::json reliability_to_json(const ReliabilityReport& report);

}  // namespace opgran
