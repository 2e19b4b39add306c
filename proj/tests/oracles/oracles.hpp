#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <vector>

#include "opgran/metrics.hpp"

// Brute-force references. They share only the documented conventions with
// the library (snap tolerance, decision rule, sentinels), never its code.
namespace opgran::oracle {

// Tries every cell size k = 1..steps units in order. For each, every cell
// [c*k, (c+1)*k) is checked for a point by direct interval comparison; the
// last cell also takes everything at or past its lower edge.
inline double granularity(const std::vector<double>& points, std::int64_t steps) {
  std::vector<double> q;
  for (double p : points) {
    double u = p * static_cast<double>(steps);
    if (std::abs(u - std::round(u)) < 1e-7) u = std::round(u);
    q.push_back(u);
  }
  for (std::int64_t k = 1; k <= steps; ++k) {
    const std::int64_t cells = (steps + k - 1) / k;
    bool all = true;
    for (std::int64_t c = 0; c < cells && all; ++c) {
      const double lo = static_cast<double>(c * k);
      const double hi = static_cast<double>((c + 1) * k);
      bool hit = false;
      for (double u : q) {
        if (u >= lo && (u < hi || c == cells - 1)) {
          hit = true;
          break;
        }
      }
      all = hit;
    }
    if (all) return static_cast<double>(k) / static_cast<double>(steps);
  }
  return 1.0;
}

// Mean over all (positive, negative) pairs of 1 / 0.5 / 0.
inline double pairwise_auroc(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline ConfusionMatrix count_at(const std::vector<int>& labels, const std::vector<double>& scores, double th) {
  ConfusionMatrix m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = scores[i] > th;
    if (pred && labels[i] == 1) ++m.tp;
    else if (pred) ++m.fp;
    else if (labels[i] == 1) ++m.fn;
    else ++m.tn;
  }
  return m;
}

// Step-wise average precision, walking records one threshold at a time.
inline double average_precision(const std::vector<int>& labels, const std::vector<double>& scores) {
  std::vector<double> th(scores);
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double pos = 0.0;
  for (int y : labels) pos += y;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : th) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (scores[i] >= t) (labels[i] == 1 ? tp : fp) += 1.0;
    }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

}  // namespace opgran::oracle
