#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace opgran {

/// One classified instance: label, temperature-0 verbalized scores and
/// temperature-1 samples. Fields the schema does not know are kept in `extra`
/// and written back unchanged.
struct PredictionRecord {
  std::string id;
  std::string dataset_id;
  std::optional<int> label;
  std::optional<double> score_pos;
  std::optional<double> score_neg;
  std::vector<double> samples_pos;
  std::optional<std::string> decision;
  std::optional<double> decision_confidence;
  std::optional<std::string> raw;
  /// The positive score exactly as the model wrote it ("0.90" vs "0.9").
  std::optional<std::string> score_pos_text;
  std::optional<double> score_enriched;
  std::vector<std::string> flags;
  nlohmann::json extra = nlohmann::json::object();

  bool flagged() const noexcept { return !flags.empty(); }
};

inline constexpr double kNormalizationTolerance = 0.05;

/// Parse one JSON object. Numeric fields may be given as strings ("0.95").
/// Throws std::invalid_argument with a message on schema or range violations.
/// Soft problems (unnormalized class scores, missing score) become flags.
PredictionRecord record_from_json(const nlohmann::json& obj);
nlohmann::json record_to_json(const PredictionRecord& rec);

struct IngestError {
  std::size_t line = 0;
  std::string message;
};

struct IngestReport {
  std::size_t accepted = 0;
  std::size_t flagged = 0;
  std::size_t rejected = 0;
  std::vector<IngestError> errors;
};

struct RecordFile {
  std::vector<PredictionRecord> records;
  IngestReport report;
  /// Content of the leading {"_meta": {...}} line, or an empty object.
  nlohmann::json metadata = nlohmann::json::object();
};

/// Load JSONL (one object per line) or CSV (header with at least id and
/// score_pos; samples_pos semicolon-joined). The format is picked by the
/// `.csv` extension. Bad lines are collected, not fatal; more than half the
/// data lines rejected throws DataError, as does an unreadable file.
RecordFile load_records(const std::filesystem::path& path);

/// Write JSONL. A non-empty `metadata` object is written first as {"_meta": ...}.
void write_records(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                   const nlohmann::json& metadata = nlohmann::json::object());

/// CSV with columns id,dataset_id,label,score_pos,score_neg,samples_pos.
void write_records_csv(const std::filesystem::path& path, std::span<const PredictionRecord> records);

// --- Aggregation baselines -------------------------------------------------

/// Fraction of samples whose score exceeds 0.5. This is the most-frequent-class
/// ratio mapped onto the positive axis, and an even split gives 0.5. Throws
/// DataError when a record has no samples.
std::vector<double> aggregate_sample_label(std::span<const PredictionRecord> records);

/// Mean of samples_pos per record. Throws DataError when a record has no samples.
std::vector<double> aggregate_sample_prob(std::span<const PredictionRecord> records);

struct ClassScores {
  double pos = 0.0;
  double neg = 0.0;
};

struct BiasedAggregate {
  double score = 0.5;
  bool flagged = false;  // zero total mass; score fell back to 0.5
};

/// Runs prompted with a bias toward each class: average each class's score
/// across runs, then normalize to sum to one. Returns the positive share.
BiasedAggregate aggregate_mean_biased(std::span<const ClassScores> runs);

struct CardinalityPoint {
  double fraction = 0.0;
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean and sample standard deviation of the distinct-value count over
/// `n_seeds` random subsamples (without replacement) of each fraction.
std::vector<CardinalityPoint> cardinality_vs_samplesize(std::span<const double> scores,
                                                        std::span<const double> fractions,
                                                        std::size_t n_seeds, std::uint64_t seed);

}  // namespace opgran
