#include "opgran/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "opgran/errors.hpp"

namespace opgran {

ScoredDataset::ScoredDataset(std::vector<int> labels, std::vector<double> scores)
    : labels_(std::move(labels)), scores_(std::move(scores)) {
  if (labels_.size() != scores_.size()) {
    throw std::invalid_argument("labels and scores differ in length");
  }
  if (labels_.empty()) throw DataError("empty dataset");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] != 0 && labels_[i] != 1) {
      throw std::invalid_argument("label at index " + std::to_string(i) + " is not 0 or 1");
    }
    const double s = scores_[i];
    if (!(s >= 0.0 && s <= 1.0)) {
      throw std::invalid_argument("score at index " + std::to_string(i) + " outside [0, 1]");
    }
    positives_ += static_cast<std::size_t>(labels_[i]);
  }
}

ConfusionMatrix confusion_at_threshold(const ScoredDataset& data, double th) {
  if (!std::isfinite(th)) throw std::invalid_argument("threshold must be finite");
  ConfusionMatrix m;
  const auto& y = data.labels();
  const auto& s = data.scores();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool predicted = s[i] > th;
    if (predicted) {
      (y[i] == 1 ? m.tp : m.fp)++;
    } else {
      (y[i] == 1 ? m.fn : m.tn)++;
    }
  }
  return m;
}

namespace {

// Score groups sorted by decreasing value with per-group label counts.
struct ScoreGroup {
  double value;
  std::size_t pos;
  std::size_t neg;
};

std::vector<ScoreGroup> group_descending(const ScoredDataset& data) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& s = data.scores();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });

  std::vector<ScoreGroup> groups;
  for (std::size_t idx : order) {
    if (groups.empty() || groups.back().value != s[idx]) groups.push_back({s[idx], 0, 0});
    (data.labels()[idx] == 1 ? groups.back().pos : groups.back().neg)++;
  }
  return groups;
}

CurvePoint make_point(CurveSpace space, double threshold, const ConfusionMatrix& m) {
  CurvePoint p;
  p.threshold = threshold;
  p.counts = m;
  const double pos = static_cast<double>(m.tp + m.fn);
  const double neg = static_cast<double>(m.fp + m.tn);
  if (space == CurveSpace::PR) {
    p.x = static_cast<double>(m.tp) / pos;
    const std::size_t predicted = m.tp + m.fp;
    p.y = predicted == 0 ? 1.0 : static_cast<double>(m.tp) / static_cast<double>(predicted);
  } else {
    p.x = static_cast<double>(m.fp) / neg;
    p.y = static_cast<double>(m.tp) / pos;
  }
  return p;
}

}  // namespace

OperatingCurve build_curve(const ScoredDataset& data, CurveSpace space) {
  if (data.positives() == 0) {
    throw DataError(space == CurveSpace::PR ? "no positive labels" : "degenerate class distribution");
  }
  if (space == CurveSpace::ROC && data.negatives() == 0) {
    throw DataError("degenerate class distribution");
  }
  const auto groups = group_descending(data);
  const std::size_t P = data.positives();
  const std::size_t N = data.negatives();

  OperatingCurve curve;
  curve.space = space;
  curve.points.reserve(groups.size() + 2);

  // At threshold v_j the predicted positives are exactly the groups above v_j.
  ConfusionMatrix m{0, 0, N, P};
  curve.points.push_back(make_point(space, groups.front().value + 1.0, m));
  for (const auto& g : groups) {
    curve.points.push_back(make_point(space, g.value, m));
    m.tp += g.pos;
    m.fn -= g.pos;
    m.fp += g.neg;
    m.tn -= g.neg;
  }
  curve.points.push_back(make_point(space, groups.back().value - 1.0, m));
  return curve;
}

double auroc(const ScoredDataset& data) {
  if (data.positives() == 0 || data.negatives() == 0) {
    throw DataError("degenerate class distribution");
  }
  // Walk groups from the lowest score upward, counting negatives strictly below.
  auto groups = group_descending(data);
  double wins = 0.0;
  double neg_below = 0.0;
  for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
    const double pos = static_cast<double>(it->pos);
    const double neg = static_cast<double>(it->neg);
    wins += pos * neg_below + 0.5 * pos * neg;
    neg_below += neg;
  }
  return wins / (static_cast<double>(data.positives()) * static_cast<double>(data.negatives()));
}

double trapezoid_area(const OperatingCurve& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    area += (b.x - a.x) * (a.y + b.y) * 0.5;
  }
  return area;
}

double prauc(const ScoredDataset& data, PraucMethod method) {
  const OperatingCurve pr = build_curve(data, CurveSpace::PR);
  double area = 0.0;
  // Points come in decreasing-threshold order, so recall is non-decreasing.
  for (std::size_t i = 1; i < pr.points.size(); ++i) {
    const auto& a = pr.points[i - 1];
    const auto& b = pr.points[i];
    const double dr = b.x - a.x;
    if (method == PraucMethod::trapezoid) {
      area += dr * (a.y + b.y) * 0.5;
    } else {
      area += dr * b.y;
    }
  }
  return area;
}

ReliabilityReport ece(const ScoredDataset& data, std::size_t n_bins) {
  if (n_bins == 0) throw std::invalid_argument("n_bins must be >= 1");
  ReliabilityReport report;
  report.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<double> pos_sum(n_bins, 0.0);
  const double width = 1.0 / static_cast<double>(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    report.bins[b].lower = static_cast<double>(b) * width;
    report.bins[b].upper = b + 1 == n_bins ? 1.0 : static_cast<double>(b + 1) * width;
  }
  const auto& s = data.scores();
  const auto& y = data.labels();
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto b = static_cast<std::size_t>(std::floor(s[i] * static_cast<double>(n_bins)));
    b = std::min(b, n_bins - 1);
    report.bins[b].count++;
    conf_sum[b] += s[i];
    pos_sum[b] += y[i];
  }
  const double n = static_cast<double>(s.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = report.bins[b];
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / c;
    bin.empirical_positive_rate = pos_sum[b] / c;
    report.ece += (c / n) * std::abs(bin.mean_confidence - bin.empirical_positive_rate);
  }
  return report;
}

double scott_bandwidth(std::span<const double> points) {
  const double n = static_cast<double>(points.size());
  if (points.empty()) return kKdeBandwidthFloor;
  const double mean = std::accumulate(points.begin(), points.end(), 0.0) / n;
  double ss = 0.0;
  for (double p : points) ss += (p - mean) * (p - mean);
  const double sigma = std::sqrt(ss / n);
  return std::max(sigma * std::pow(n, -0.2), kKdeBandwidthFloor);
}

std::vector<double> kde_density(std::span<const double> points, std::span<const double> grid,
                                ExecPolicy policy) {
  if (points.empty()) throw std::invalid_argument("kde_density needs at least one point");
  const double h = scott_bandwidth(points);
  const double norm = 1.0 / (static_cast<double>(points.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  const double inv_two_h2 = 1.0 / (2.0 * h * h);
  std::vector<double> out(grid.size(), 0.0);
  const auto n_grid = static_cast<std::ptrdiff_t>(grid.size());

  auto eval = [&](std::ptrdiff_t g) {
    const double p = grid[static_cast<std::size_t>(g)];
    double acc = 0.0;
    for (double pi : points) {
      const double d = p - pi;
      acc += std::exp(-d * d * inv_two_h2);
    }
    out[static_cast<std::size_t>(g)] = acc * norm;
  };

  if (policy == ExecPolicy::parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t g = 0; g < n_grid; ++g) eval(g);
  } else {
    for (std::ptrdiff_t g = 0; g < n_grid; ++g) eval(g);
  }
  return out;
}

std::size_t cardinality(std::span<const double> scores) {
  std::vector<double> v(scores.begin(), scores.end());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

nlohmann::json curve_to_json(const OperatingCurve& curve) {
  auto arr = nlohmann::json::array();
  for (const auto& p : curve.points) {
    arr.push_back({{"threshold", p.threshold}, {"x", p.x}, {"y", p.y}});
  }
  return arr;
}

std::string curve_to_csv(const OperatingCurve& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,x,y\n";
  for (const auto& p : curve.points) os << p.threshold << ',' << p.x << ',' << p.y << '\n';
  return os.str();
}

nlohmann::json reliability_to_json(const ReliabilityReport& report) {
  auto bins = nlohmann::json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"mean_confidence", b.mean_confidence},
                    {"empirical_positive_rate", b.empirical_positive_rate},
                    {"count", b.count}});
  }
  return {{"bins", bins}, {"ece", report.ece}};
}

}  // namespace opgran
