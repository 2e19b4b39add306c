#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "opgran/enrich_unsup.hpp"
#include "opgran/exec.hpp"
#include "opgran/records.hpp"

namespace opgran {

enum class Variant { one_call, two_call };
enum class NoiseMode { adaptive, none, input_additive, feature };

std::string to_string(Variant v);
std::string to_string(NoiseMode m);
Variant parse_variant(std::string_view text);     // accepts one_call / one-call
NoiseMode parse_noise_mode(std::string_view text);

/// Standard deviation of the input perturbation in input_additive mode.
inline constexpr double kInputNoiseSd = 0.001;
/// Lower bound on the noise scale w after each optimizer step.
inline constexpr double kMinNoiseScale = 1e-3;
inline constexpr double kProbClamp = 1e-12;

/// Two ReLU hidden layers of width 2^(features + 1) and one output. The
/// prediction is sig(f(x) + z / w) in adaptive mode and sig(f(x) + 1 / w)
/// in the other modes.
struct EnrichmentModel {
  Variant variant = Variant::one_call;
  NoiseMode noise_mode = NoiseMode::adaptive;
  std::vector<int> layer_dims;          // {input, hidden, hidden, 1}
  std::vector<Eigen::MatrixXd> weights; // weights[l] is out x in
  std::vector<Eigen::VectorXd> biases;
  double w = 1.0;
  double lambda = 0.01;
  int version = 1;

  /// Number of score features read from a record (2 or 4).
  int feature_count() const noexcept;
};

/// Untrained model with uniform fan-based weights, zero biases and w = 1.
EnrichmentModel init_model(Variant variant, NoiseMode mode, std::uint64_t seed);

/// Rows fed to the network. `z` is the standard normal draw per row; `eps`
/// holds per-feature standard normal draws used by input_additive mode.
struct Batch {
  Eigen::MatrixXd features;  // rows x feature_count
  Eigen::VectorXd labels;
  Eigen::VectorXd z;
  Eigen::MatrixXd eps;
};

/// Single prediction. `input_noise` (standard normal, one per feature) is
/// only read in input_additive mode and may be empty otherwise.
double forward(const EnrichmentModel& model, std::span<const double> features, double z,
               std::span<const double> input_noise = {});

/// Batched predictions.
Eigen::VectorXd forward(const EnrichmentModel& model, const Batch& batch);

/// Mean binary cross-entropy (probabilities clamped by 1e-12) plus lambda * |w|.
double loss(const EnrichmentModel& model, const Batch& batch);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  double w = 0.0;
  double loss = 0.0;
};

Gradients gradients(const EnrichmentModel& model, const Batch& batch);

struct TrainingRows {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  /// Index of the source record for each row; splits never separate a record.
  std::vector<std::size_t> record;
  /// True for the row used when the record sits in the validation split.
  std::vector<bool> primary;
};

/// Score features of one record: [score_pos, score_neg] for one_call, plus
/// [sample, 1 - sample] for two_call. Missing score_neg means 1 - score_pos.
std::vector<double> record_features(const PredictionRecord& rec, Variant variant, std::size_t sample = 0);

/// one_call: one row per labelled record. two_call: one row per (record,
/// temperature-1 sample) pair. Unlabelled records are skipped.
TrainingRows build_training_rows(std::span<const PredictionRecord> records, Variant variant);

struct TrainConfig {
  std::vector<double> learning_rates{0.01, 0.05, 0.1};
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2, 1e-1};
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  /// 0 selects 64 up to 4096 training rows and 256 above.
  std::size_t batch_size = 0;
  Variant variant = Variant::one_call;
  NoiseMode noise_mode = NoiseMode::adaptive;
  ExecPolicy policy = ExecPolicy::parallel;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_prauc = 0.0;
};

struct CellLog {
  double learning_rate = 0.0;
  double lambda = 0.0;
  std::vector<EpochLog> epochs;
  double best_val_prauc = 0.0;
  std::size_t best_epoch = 0;
  bool aborted = false;
  std::string message;
};

struct TrainLog {
  std::vector<CellLog> cells;
  std::size_t best_cell = 0;
  std::size_t train_rows = 0;
  std::size_t val_rows = 0;
};

struct TrainResult {
  EnrichmentModel model;
  TrainLog log;
};

/// Grid search over (learning rate, lambda). Each cell starts from the same
/// initialization, runs Adam with early stopping on validation PRAUC and keeps
/// its best epoch. Throws DataError for fewer than 20 rows or a single class,
/// ConfigError for invalid settings.
TrainResult train(const TrainingRows& rows, const TrainConfig& config);

/// Apply a trained model. The noise draw for a record comes from a stream
/// keyed by its id. two_call reads the first temperature-1 sample.
EnrichedScores enrich_supervised(const EnrichmentModel& model, std::span<const PredictionRecord> records,
                                 std::uint64_t seed);

nlohmann::json model_to_json(const EnrichmentModel& model);
EnrichmentModel model_from_json(const nlohmann::json& j);
nlohmann::json train_log_to_json(const TrainLog& log);

namespace detail {
/// Smallest |pre-activation| over all hidden units and rows; finite
/// difference checks skip draws that sit too close to a ReLU kink.
double min_abs_preactivation(const EnrichmentModel& model, const Batch& batch);
std::size_t effective_batch_size(std::size_t requested, std::size_t rows);
}  // namespace detail

}  // namespace opgran
