#include "opgran/bias.hpp"

#include <charconv>
#include <stdexcept>

namespace opgran {

std::size_t PositionHistogram::total_at(std::size_t position) const {
  if (position == 0 || position > positions.size()) return 0;
  std::size_t total = 0;
  for (const auto& [c, n] : positions[position - 1]) total += n;
  return total;
}

bool is_decimal_numeral(std::string_view s) {
  std::size_t digits = 0, dots = 0;
  for (char c : s) {
    if (c >= '0' && c <= '9') {
      ++digits;
    } else if (c == '.') {
      ++dots;
    } else {
      return false;
    }
  }
  return digits > 0 && dots <= 1;
}

PositionHistogram char_position_counts(std::span<const std::string> score_strings) {
  PositionHistogram h;
  for (const auto& s : score_strings) {
    if (!is_decimal_numeral(s)) {
      ++h.skipped;
      continue;
    }
    ++h.strings;
    if (h.positions.size() < s.size()) h.positions.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) ++h.positions[i][s[i]];
  }
  return h;
}

std::string to_string(Roundness r) {
  switch (r) {
    case Roundness::ends_zero:
      return "ends_zero";
    case Roundness::ends_five:
      return "ends_five";
    default:
      return "other";
  }
}

Roundness roundness_class(std::string_view s) {
  if (!is_decimal_numeral(s)) throw std::invalid_argument("not a decimal numeral: " + std::string(s));
  const auto last = s.find_last_of("0123456789");
  switch (s[last]) {
    case '0':
      return Roundness::ends_zero;
    case '5':
      return Roundness::ends_five;
    default:
      return Roundness::other;
  }
}

RoundnessSummary roundness_summary(std::span<const std::string> score_strings) {
  RoundnessSummary r;
  std::size_t zero = 0, five = 0, other = 0;
  for (const auto& s : score_strings) {
    if (!is_decimal_numeral(s)) {
      ++r.skipped;
      continue;
    }
    switch (roundness_class(s)) {
      case Roundness::ends_zero:
        ++zero;
        break;
      case Roundness::ends_five:
        ++five;
        break;
      default:
        ++other;
    }
  }
  r.counted = zero + five + other;
  if (r.counted > 0) {
    const auto n = static_cast<double>(r.counted);
    r.ends_zero = static_cast<double>(zero) / n;
    r.ends_five = static_cast<double>(five) / n;
    r.other = static_cast<double>(other) / n;
  }
  return r;
}

std::vector<std::string> score_strings(std::span<const PredictionRecord> records) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (r.score_pos_text) {
      out.push_back(*r.score_pos_text);
    } else if (r.score_pos) {
      char buf[32];
      const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, *r.score_pos);
      if (ec == std::errc{}) out.emplace_back(buf, p);
    }
  }
  return out;
}

nlohmann::json bias_to_json(const PositionHistogram& hist, const RoundnessSummary& summary) {
  auto positions = nlohmann::json::array();
  for (std::size_t i = 0; i < hist.positions.size(); ++i) {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [c, n] : hist.positions[i]) counts[std::string(1, c)] = n;
    positions.push_back({{"position", i + 1}, {"counts", counts}});
  }
  return {{"histogram", {{"strings", hist.strings}, {"skipped", hist.skipped}, {"positions", positions}}},
          {"roundness",
           {{"ends_zero", summary.ends_zero},
            {"ends_five", summary.ends_five},
            {"other", summary.other},
            {"counted", summary.counted},
            {"skipped", summary.skipped}}}};
}

}  // namespace opgran
