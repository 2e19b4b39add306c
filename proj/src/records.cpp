#include "opgran/records.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "opgran/errors.hpp"
#include "opgran/metrics.hpp"
#include "opgran/rng.hpp"

namespace opgran {

namespace {

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "id",  "dataset_id",     "label",          "score_pos", "score_neg", "samples_pos", "decision",
      "decision_confidence", "raw", "score_pos_text", "score_enriched", "flags"};
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> parse_double(std::string_view text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

double number_field(const nlohmann::json& v, const char* name) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    if (auto d = parse_double(v.get_ref<const std::string&>())) return *d;
  }
  throw std::invalid_argument(std::string(name) + " is not a number");
}

double probability_field(const nlohmann::json& v, const char* name) {
  const double p = number_field(v, name);
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(name) + " outside [0, 1]");
  return p;
}

int label_field(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  const double d = number_field(v, "label");
  if (d == 0.0) return 0;
  if (d == 1.0) return 1;
  throw std::invalid_argument("label must be 0 or 1");
}

void add_flag(PredictionRecord& rec, const std::string& flag) {
  if (std::find(rec.flags.begin(), rec.flags.end(), flag) == rec.flags.end()) rec.flags.push_back(flag);
}

void apply_soft_checks(PredictionRecord& rec) {
  if (!rec.score_pos) add_flag(rec, "missing_score");
  if (rec.score_pos && rec.score_neg &&
      std::abs(*rec.score_pos + *rec.score_neg - 1.0) > kNormalizationTolerance + 1e-12) {
    add_flag(rec, "unnormalized_scores");
  }
}

}  // namespace

PredictionRecord record_from_json(const nlohmann::json& obj) {
  if (!obj.is_object()) throw std::invalid_argument("record is not a JSON object");
  PredictionRecord rec;

  const auto id = obj.find("id");
  if (id == obj.end() || id->is_null()) throw std::invalid_argument("missing id");
  rec.id = id->is_string() ? id->get<std::string>() : id->dump();
  if (rec.id.empty()) throw std::invalid_argument("empty id");

  auto present = [&](const char* key) -> const nlohmann::json* {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return nullptr;
    return &*it;
  };

  if (auto v = present("dataset_id")) rec.dataset_id = v->is_string() ? v->get<std::string>() : v->dump();
  if (auto v = present("label")) rec.label = label_field(*v);
  if (auto v = present("score_pos")) rec.score_pos = probability_field(*v, "score_pos");
  if (auto v = present("score_neg")) rec.score_neg = probability_field(*v, "score_neg");
  if (auto v = present("samples_pos")) {
    if (!v->is_array()) throw std::invalid_argument("samples_pos is not an array");
    for (const auto& s : *v) rec.samples_pos.push_back(probability_field(s, "samples_pos"));
  }
  if (auto v = present("decision")) rec.decision = v->is_string() ? v->get<std::string>() : v->dump();
  if (auto v = present("decision_confidence")) {
    rec.decision_confidence = probability_field(*v, "decision_confidence");
  }
  if (auto v = present("raw")) rec.raw = v->is_string() ? v->get<std::string>() : v->dump();
  if (auto v = present("score_pos_text")) {
    rec.score_pos_text = v->is_string() ? v->get<std::string>() : v->dump();
  }
  if (auto v = present("score_enriched")) rec.score_enriched = probability_field(*v, "score_enriched");
  if (auto v = present("flags")) {
    if (!v->is_array()) throw std::invalid_argument("flags is not an array");
    for (const auto& f : *v) rec.flags.push_back(f.is_string() ? f.get<std::string>() : f.dump());
  }

  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const auto& keys = known_keys();
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) rec.extra[it.key()] = it.value();
  }
  apply_soft_checks(rec);
  return rec;
}

nlohmann::json record_to_json(const PredictionRecord& rec) {
  nlohmann::json j = nlohmann::json::object();
  j["id"] = rec.id;
  if (!rec.dataset_id.empty()) j["dataset_id"] = rec.dataset_id;
  if (rec.label) j["label"] = *rec.label;
  if (rec.score_pos) j["score_pos"] = *rec.score_pos;
  if (rec.score_neg) j["score_neg"] = *rec.score_neg;
  if (!rec.samples_pos.empty()) j["samples_pos"] = rec.samples_pos;
  if (rec.decision) j["decision"] = *rec.decision;
  if (rec.decision_confidence) j["decision_confidence"] = *rec.decision_confidence;
  if (rec.raw) j["raw"] = *rec.raw;
  if (rec.score_pos_text) j["score_pos_text"] = *rec.score_pos_text;
  if (rec.score_enriched) j["score_enriched"] = *rec.score_enriched;
  if (!rec.flags.empty()) j["flags"] = rec.flags;
  for (auto it = rec.extra.begin(); it != rec.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quote");
  cells.push_back(std::move(cur));
  return cells;
}

nlohmann::json csv_row_to_json(const std::vector<std::string>& header, const std::vector<std::string>& cells) {
  if (cells.size() != header.size()) throw std::invalid_argument("column count does not match header");
  nlohmann::json obj = nlohmann::json::object();
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string value = trim(cells[c]);
    if (value.empty()) continue;
    if (header[c] == "samples_pos") {
      auto arr = nlohmann::json::array();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ';')) {
        if (!trim(item).empty()) arr.push_back(trim(item));
      }
      obj["samples_pos"] = arr;
    } else {
      obj[header[c]] = value;
    }
  }
  return obj;
}

bool has_csv_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".csv";
}

}  // namespace

RecordFile load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());

  RecordFile file;
  const bool csv = has_csv_extension(path);
  std::vector<std::string> header;
  std::string line;
  std::size_t line_no = 0;
  std::size_t data_lines = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (csv && header.empty()) {
      header = split_csv_line(line);
      for (auto& h : header) h = trim(h);
      if (std::find(header.begin(), header.end(), "id") == header.end()) {
        throw DataError("CSV header lacks an id column");
      }
      continue;
    }
    if (csv && line.front() == '#') continue;

    nlohmann::json obj;
    try {
      if (csv) {
        obj = csv_row_to_json(header, split_csv_line(line));
      } else {
        obj = nlohmann::json::parse(line);
        if (obj.is_object() && obj.size() == 1 && obj.contains("_meta")) {
          file.metadata = obj["_meta"];
          continue;
        }
      }
      ++data_lines;
      PredictionRecord rec = record_from_json(obj);
      file.report.accepted++;
      if (rec.flagged()) file.report.flagged++;
      file.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      if (obj.is_null()) ++data_lines;
      file.report.rejected++;
      file.report.errors.push_back({line_no, e.what()});
    }
  }
  if (data_lines > 0 && 2 * file.report.rejected > data_lines) {
    throw DataError(path.string() + ": " + std::to_string(file.report.rejected) + " of " +
                    std::to_string(data_lines) + " lines rejected");
  }
  return file;
}

void write_records(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                   const nlohmann::json& metadata) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (metadata.is_object() && !metadata.empty()) out << nlohmann::json{{"_meta", metadata}}.dump() << '\n';
  for (const auto& rec : records) out << record_to_json(rec).dump() << '\n';
}

void write_records_csv(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  out << "id,dataset_id,label,score_pos,score_neg,samples_pos\n";
  for (const auto& r : records) {
    out << quote(r.id) << ',' << quote(r.dataset_id) << ',' << (r.label ? std::to_string(*r.label) : "") << ','
        << (r.score_pos ? num(*r.score_pos) : "") << ',' << (r.score_neg ? num(*r.score_neg) : "") << ',';
    for (std::size_t i = 0; i < r.samples_pos.size(); ++i) out << (i ? ";" : "") << num(r.samples_pos[i]);
    out << '\n';
  }
}

std::vector<double> aggregate_sample_label(std::span<const PredictionRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.samples_pos.empty()) throw DataError("record " + r.id + " has no samples");
    const auto positive = std::count_if(r.samples_pos.begin(), r.samples_pos.end(), [](double s) { return s > 0.5; });
    out.push_back(static_cast<double>(positive) / static_cast<double>(r.samples_pos.size()));
  }
  return out;
}

std::vector<double> aggregate_sample_prob(std::span<const PredictionRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.samples_pos.empty()) throw DataError("record " + r.id + " has no samples");
    // Sort before summing so the mean does not depend on sample order.
    std::vector<double> s = r.samples_pos;
    std::sort(s.begin(), s.end());
    out.push_back(std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()));
  }
  return out;
}

BiasedAggregate aggregate_mean_biased(std::span<const ClassScores> runs) {
  if (runs.empty()) return {0.5, true};
  double pos = 0.0;
  double neg = 0.0;
  for (const auto& r : runs) {
    pos += r.pos;
    neg += r.neg;
  }
  pos /= static_cast<double>(runs.size());
  neg /= static_cast<double>(runs.size());
  if (pos + neg <= 0.0) return {0.5, true};
  return {pos / (pos + neg), false};
}

std::vector<CardinalityPoint> cardinality_vs_samplesize(std::span<const double> scores,
                                                        std::span<const double> fractions,
                                                        std::size_t n_seeds, std::uint64_t seed) {
  if (n_seeds == 0) throw std::invalid_argument("n_seeds must be >= 1");
  std::vector<CardinalityPoint> curve;
  const std::size_t n = scores.size();
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    const double frac = fractions[f];
    if (!(frac > 0.0 && frac <= 1.0)) throw std::invalid_argument("fractions must lie in (0, 1]");
    const auto take = std::min(n, std::max<std::size_t>(n ? 1 : 0, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)))));
    std::vector<double> counts;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      std::vector<double> pool(scores.begin(), scores.end());
      Stream rng(seed, f * n_seeds + s, StreamDomain::subsample);
      for (std::size_t i = 0; i < take; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(pool[i], pool[j]);
      }
      counts.push_back(static_cast<double>(cardinality(std::span<const double>(pool.data(), take))));
    }
    const double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / static_cast<double>(counts.size());
    double ss = 0.0;
    for (double c : counts) ss += (c - mean) * (c - mean);
    const double sd = counts.size() > 1 ? std::sqrt(ss / static_cast<double>(counts.size() - 1)) : 0.0;
    curve.push_back({frac, mean, sd});
  }
  return curve;
}

}  // namespace opgran
