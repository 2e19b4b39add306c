#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "opgran/granularity.hpp"
#include "opgran/metrics.hpp"
#include "opgran/records.hpp"

namespace opgran {

struct MethodMetrics {
  std::string method;
  std::size_t n_records = 0;
  std::size_t flags = 0;
  GranularityReport granularity;
  double prauc_trapezoid = 0.0;
  double prauc_average_precision = 0.0;
  double auroc = 0.0;
  double ece = 0.0;
};

/// Full metric suite on one score column. Throws DataError when the data is
/// empty or has a single class.
MethodMetrics method_metrics(std::string method, const ScoredDataset& data, double resolution, std::size_t flags = 0);

nlohmann::json method_metrics_to_json(const MethodMetrics& m);

/// Labelled records with a value in the chosen column ("score_pos" or
/// "score_enriched"). Records without one are skipped.
ScoredDataset dataset_from_records(std::span<const PredictionRecord> records, const std::string& column);

/// Metadata block written into every output: seed, version, resolution and
/// the SHA-256 of each input file.
nlohmann::json output_metadata(std::uint64_t seed, double resolution, std::span<const std::filesystem::path> inputs,
                               const std::string& command);

/// Metrics for score_pos and, when any record carries one, score_enriched.
nlohmann::json analysis_report(const RecordFile& file, double resolution, const nlohmann::json& metadata);

struct CompareRow {
  std::string method;
  std::optional<double> calls_per_instance;
  MethodMetrics metrics;
};

/// One row per file. The score column is score_enriched when present,
/// otherwise score_pos. Method name and calls per instance come from the
/// file's metadata when declared. Throws ConsistencyError when ids or labels
/// differ between files.
std::vector<CompareRow> compare_files(std::span<const RecordFile> files, std::span<const std::string> names,
                                      double resolution);

std::string compare_to_csv(std::span<const CompareRow> rows);
nlohmann::json compare_to_json(std::span<const CompareRow> rows);

/// Scatter of the curve points with 50-bin marginal histograms and KDE
/// overlays of both axis projections, as a standalone SVG document.
std::string curve_svg(const OperatingCurve& curve, const std::string& title);

}  // namespace opgran
