#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "opgran/records.hpp"

namespace opgran {

/// Character counts per 1-based position of the score strings.
struct PositionHistogram {
  std::vector<std::map<char, std::size_t>> positions;  // positions[0] is position 1
  std::size_t strings = 0;
  std::size_t skipped = 0;

  std::size_t total_at(std::size_t position) const;
};

/// True for plain decimal numerals such as "0.95", "1", ".5".
bool is_decimal_numeral(std::string_view s);

/// Non-numeric strings are skipped and counted in `skipped`.
PositionHistogram char_position_counts(std::span<const std::string> score_strings);

enum class Roundness { ends_zero, ends_five, other };

std::string to_string(Roundness r);

/// Class of the last written digit, so "0.9" is other and "0.90" ends_zero.
/// Throws std::invalid_argument for non-numeric text.
Roundness roundness_class(std::string_view score_string);

struct RoundnessSummary {
  double ends_zero = 0.0;
  double ends_five = 0.0;
  double other = 0.0;
  std::size_t counted = 0;
  std::size_t skipped = 0;
};

RoundnessSummary roundness_summary(std::span<const std::string> score_strings);

/// Score strings of records: score_pos_text when present, otherwise the
/// shortest round-trip representation of score_pos.
std::vector<std::string> score_strings(std::span<const PredictionRecord> records);

nlohmann::json bias_to_json(const PositionHistogram& hist, const RoundnessSummary& summary);

}  // namespace opgran
