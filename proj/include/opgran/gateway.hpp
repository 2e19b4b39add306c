#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "opgran/records.hpp"

namespace opgran {

enum class TemplateKind {
  baseline,
  two_stage,
  two_stage_cot,
  specificity_low,
  specificity_medium,
  specificity_high,
  specificity_linear,
  specificity_logistic,
  score_range,
  not_step5,
  two_decimals,
  coarse_fine,
  in_context,
  multiple_predictions,
};

std::string to_string(TemplateKind kind);

struct PromptTemplate {
  TemplateKind kind = TemplateKind::baseline;
  /// Upper end of the requested scale for score_range ("from 0 to x").
  double range_max = 100.0;
  std::string context;
  /// Class names; the first is treated as the positive class.
  std::vector<std::string> class_labels{"positive", "negative"};
};

/// Accepts names such as "baseline", "two-stage-cot" or "score_range(100)".
/// Throws ConfigError for unknown names.
PromptTemplate parse_template(std::string_view name, std::string context = {},
                              std::vector<std::string> class_labels = {"positive", "negative"});

/// Per-class score tags, one line each.
std::string category_probabilities(const PromptTemplate& tpl);

/// Full prompt. For two-stage templates this is the first (decision) call.
std::string render_prompt(const PromptTemplate& tpl, std::string_view instance_text);

/// Second call of a two-stage template: confidence that `decision` is correct.
std::string render_confidence_prompt(const PromptTemplate& tpl, std::string_view instance_text,
                                     std::string_view decision);

enum class ListReducer { random, mean, median };

struct ParseOptions {
  ListReducer reducer = ListReducer::random;
  std::uint64_t seed = 0;
  std::uint64_t key = 0;  // stream key for the random reducer
};

/// Total parser: never throws. Reads per-class scores, decision and decision
/// confidence from JSON or tag-structured text. Scores from score_range are
/// divided by the range; lists are reduced to one value. Anything missing or
/// out of range is recorded in `flags`; the input text is kept in `raw`.
PredictionRecord parse_response(std::string_view text, const PromptTemplate& tpl, const ParseOptions& options = {});

struct RetryPolicy {
  int max_attempts = 3;
  double base_backoff_s = 0.2;
};

struct GatewayConfig {
  std::string endpoint_url;
  std::string model_name = "model";
  double temperature = 0.0;
  std::size_t n_samples = 1;
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  double timeout_s = 60.0;
  /// Environment variable holding a bearer token; unset or empty means none.
  std::string api_key_env = "LLM_API_KEY";
  ListReducer reducer = ListReducer::random;
  std::uint64_t seed = 0;
};

struct Instance {
  std::string id;
  std::string text;
  std::optional<int> label;
  std::string dataset_id;
};

/// JSONL with id, text and optional label and dataset_id.
std::vector<Instance> load_instances(const std::filesystem::path& path);

struct GatewayStats {
  std::size_t requests = 0;
  std::size_t retries = 0;
  std::size_t failed_requests = 0;
  std::size_t flagged_records = 0;
  std::size_t max_in_flight_observed = 0;
};

struct GatewayResult {
  std::vector<PredictionRecord> records;
  GatewayStats stats;
};

/// At temperature 0 one request per instance fills score_pos. Otherwise
/// n_samples requests fill samples_pos. Failures are flagged per record;
/// NetworkError is thrown only if every request failed.
GatewayResult classify(std::span<const Instance> instances, const PromptTemplate& tpl, const GatewayConfig& config);

enum class TwoStageVariant { plain, cot };

/// Decision call followed by a confidence call. score_pos is the confidence
/// when the decision is the positive class and its complement otherwise.
GatewayResult two_stage_classify(std::span<const Instance> instances, TwoStageVariant variant,
                                 const PromptTemplate& tpl, const GatewayConfig& config);

nlohmann::json gateway_stats_to_json(const GatewayStats& stats);

namespace detail {
/// Chat-completion request body.
nlohmann::json chat_body(const GatewayConfig& config, const std::string& prompt);
/// Text of the first choice, or nullopt for an unexpected shape.
std::optional<std::string> extract_content(std::string_view body);
/// All decimal numbers in `text`, with the literal strings as written.
std::vector<std::pair<double, std::string>> scan_numbers(std::string_view text);
}  // namespace detail

}  // namespace opgran
