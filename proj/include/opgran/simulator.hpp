#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "opgran/exec.hpp"
#include "opgran/records.hpp"
#include "opgran/rng.hpp"

namespace opgran {

/// Probabilities of rounding to the 0.05 grid, the 0.1 grid, or two decimals.
/// All three zero means no rounding at all.
struct RoundingScheme {
  double p_grid_005 = 0.6;
  double p_grid_01 = 0.3;
  double p_two_decimals = 0.1;

  bool disabled() const noexcept { return p_grid_005 == 0.0 && p_grid_01 == 0.0 && p_two_decimals == 0.0; }
};

struct CalibrationMap {
  enum class Kind { identity, inverted, shifted } kind = Kind::identity;
  double delta = 0.0;

  double apply(double u) const noexcept;
};

struct Subpopulation {
  double weight = 1.0;
  double latent_auroc_target = 0.8;
  CalibrationMap calibration_map;
  RoundingScheme rounding;
  /// Mean of the Gaussian latent before the logistic link.
  double latent_mean = 0.0;
};

struct SimulatorConfig {
  std::size_t n = 1000;
  std::vector<Subpopulation> subpops{Subpopulation{}};
  std::size_t samples_per_record = 20;
  double sample_jitter_sd = 0.05;
  std::uint64_t seed = 0;
};

/// Throws ConfigError on any violated constraint.
void validate(const SimulatorConfig& config);
SimulatorConfig simulator_config_from_json(const nlohmann::json& j);
nlohmann::json simulator_config_to_json(const SimulatorConfig& config);

/// Round half up to the chosen grid, then clamp to [0, 1].
double quantize_to_grid(double u, int grid) noexcept;

/// Pick a grid from the scheme with one uniform draw and quantize.
double quantize(double u, const RoundingScheme& scheme, Stream& rng) noexcept;

/// AUROC of latent u = sig(scale * t), t ~ N(mean, 1), labels ~ Bernoulli(u),
/// by quadrature.
double expected_latent_auroc(double scale, double mean);

/// Scale at which expected_latent_auroc hits `target`. Throws ConfigError when
/// the target is outside (0.5, 0.999] or not reachable.
double scale_for_auroc(double target, double mean);

struct SimulationResult {
  std::vector<PredictionRecord> records;
  /// Un-quantized, un-miscalibrated P(y = 1) for each record.
  std::vector<double> latent;
};

/// Records are generated independently from streams keyed by record index.
SimulationResult simulate(const SimulatorConfig& config, ExecPolicy policy = ExecPolicy::parallel);

struct OracleMetrics {
  double auroc = 0.0;
  double prauc = 0.0;
};

OracleMetrics latent_oracle_metrics(std::span<const PredictionRecord> records, std::span<const double> latent);

/// Sibling file of latent scores: JSONL lines {"id": ..., "latent": ...}.
void write_latent(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                  std::span<const double> latent);
std::vector<double> read_latent(const std::filesystem::path& path, std::span<const PredictionRecord> records);

}  // namespace opgran
