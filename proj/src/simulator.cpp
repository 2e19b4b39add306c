#include "opgran/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "opgran/errors.hpp"
#include "opgran/metrics.hpp"

namespace opgran {

namespace {

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }
double clamp01(double x) noexcept { return std::clamp(x, 0.0, 1.0); }

std::string format_score(double s, bool rounded) {
  char buf[32];
  std::snprintf(buf, sizeof buf, rounded ? "%.2f" : "%.17g", s);
  return buf;
}

}  // namespace

double CalibrationMap::apply(double u) const noexcept {
  switch (kind) {
    case Kind::identity:
      return u;
    case Kind::inverted:
      return 1.0 - u;
    case Kind::shifted:
      return clamp01(u + delta);
  }
  return u;
}

void validate(const SimulatorConfig& config) {
  if (config.n < 1) throw ConfigError("n must be >= 1");
  if (config.subpops.empty()) throw ConfigError("at least one subpopulation required");
  if (config.samples_per_record < 1) throw ConfigError("samples_per_record must be >= 1");
  if (!(config.sample_jitter_sd >= 0.0) || !std::isfinite(config.sample_jitter_sd)) {
    throw ConfigError("sample_jitter_sd must be finite and >= 0");
  }
  double total = 0.0;
  for (const auto& sp : config.subpops) {
    if (!(sp.weight >= 0.0)) throw ConfigError("subpopulation weights must be >= 0");
    total += sp.weight;
    const auto& r = sp.rounding;
    if (r.p_grid_005 < 0.0 || r.p_grid_01 < 0.0 || r.p_two_decimals < 0.0) {
      throw ConfigError("rounding probabilities must be >= 0");
    }
    if (!r.disabled() && std::abs(r.p_grid_005 + r.p_grid_01 + r.p_two_decimals - 1.0) > 1e-9) {
      throw ConfigError("rounding probabilities must sum to 1");
    }
    if (!(sp.latent_auroc_target > 0.5)) throw ConfigError("latent_auroc_target must exceed 0.5");
    if (sp.latent_auroc_target > 0.999) throw ConfigError("latent_auroc_target above 0.999 is unreachable");
    if (!std::isfinite(sp.latent_mean)) throw ConfigError("latent_mean must be finite");
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("subpopulation weights must sum to 1");
}

namespace {

CalibrationMap calibration_from_json(const nlohmann::json& j) {
  CalibrationMap m;
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "identity") return m;
    if (s == "inverted") {
      m.kind = CalibrationMap::Kind::inverted;
      return m;
    }
    throw ConfigError("unknown calibration_map: " + s);
  }
  if (j.is_object() && j.contains("shifted") && j["shifted"].is_number()) {
    m.kind = CalibrationMap::Kind::shifted;
    m.delta = j["shifted"].get<double>();
    return m;
  }
  throw ConfigError("calibration_map must be \"identity\", \"inverted\" or {\"shifted\": delta}");
}

nlohmann::json calibration_to_json(const CalibrationMap& m) {
  switch (m.kind) {
    case CalibrationMap::Kind::identity:
      return "identity";
    case CalibrationMap::Kind::inverted:
      return "inverted";
    case CalibrationMap::Kind::shifted:
      return {{"shifted", m.delta}};
  }
  return "identity";
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("bad value for ") + key);
  }
}

}  // namespace

SimulatorConfig simulator_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("simulator config must be a JSON object");
  SimulatorConfig c;
  const auto n = get_or<long long>(j, "n", static_cast<long long>(c.n));
  if (n < 1) throw ConfigError("n must be >= 1");
  c.n = static_cast<std::size_t>(n);
  const auto spr = get_or<long long>(j, "samples_per_record", 20);
  if (spr < 1) throw ConfigError("samples_per_record must be >= 1");
  c.samples_per_record = static_cast<std::size_t>(spr);
  c.sample_jitter_sd = get_or<double>(j, "sample_jitter_sd", c.sample_jitter_sd);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (j.contains("subpops")) {
    if (!j["subpops"].is_array()) throw ConfigError("subpops must be an array");
    c.subpops.clear();
    for (const auto& s : j["subpops"]) {
      if (!s.is_object()) throw ConfigError("subpop entries must be objects");
      Subpopulation sp;
      sp.weight = get_or<double>(s, "weight", 1.0);
      sp.latent_auroc_target = get_or<double>(s, "latent_auroc_target", sp.latent_auroc_target);
      sp.latent_mean = get_or<double>(s, "latent_mean", 0.0);
      if (s.contains("calibration_map")) sp.calibration_map = calibration_from_json(s["calibration_map"]);
      if (s.contains("rounding")) {
        const auto& r = s["rounding"];
        if (!r.is_object()) throw ConfigError("rounding must be an object");
        sp.rounding.p_grid_005 = get_or<double>(r, "p_grid_005", 0.0);
        sp.rounding.p_grid_01 = get_or<double>(r, "p_grid_01", 0.0);
        sp.rounding.p_two_decimals = get_or<double>(r, "p_two_decimals", 0.0);
      }
      c.subpops.push_back(sp);
    }
  }
  validate(c);
  return c;
}

nlohmann::json simulator_config_to_json(const SimulatorConfig& c) {
  auto subpops = nlohmann::json::array();
  for (const auto& sp : c.subpops) {
    subpops.push_back({{"weight", sp.weight},
                       {"latent_auroc_target", sp.latent_auroc_target},
                       {"latent_mean", sp.latent_mean},
                       {"calibration_map", calibration_to_json(sp.calibration_map)},
                       {"rounding",
                        {{"p_grid_005", sp.rounding.p_grid_005},
                         {"p_grid_01", sp.rounding.p_grid_01},
                         {"p_two_decimals", sp.rounding.p_two_decimals}}}});
  }
  return {{"n", c.n},
          {"subpops", subpops},
          {"samples_per_record", c.samples_per_record},
          {"sample_jitter_sd", c.sample_jitter_sd},
          {"seed", c.seed}};
}

double quantize_to_grid(double u, int grid) noexcept {
  // The small offset keeps exact half-way decimals such as 0.625 from
  // landing below the tie because of binary representation error.
  return clamp01(std::floor(u * grid + 0.5 + 1e-9) / grid);
}

double quantize(double u, const RoundingScheme& scheme, Stream& rng) noexcept {
  if (scheme.disabled()) return clamp01(u);
  const double r = rng.uniform();
  int grid = 100;
  if (r < scheme.p_grid_005) {
    grid = 20;
  } else if (r < scheme.p_grid_005 + scheme.p_grid_01) {
    grid = 10;
  }
  return quantize_to_grid(u, grid);
}

double expected_latent_auroc(double scale, double mean) {
  constexpr int kNodes = 6001;
  constexpr double kHalfWidth = 12.0;
  const double dt = 2.0 * kHalfWidth / (kNodes - 1);
  std::vector<double> f1(kNodes), f0(kNodes);
  double z1 = 0.0, z0 = 0.0;
  for (int i = 0; i < kNodes; ++i) {
    const double t = mean - kHalfWidth + i * dt;
    const double phi = std::exp(-0.5 * (t - mean) * (t - mean));
    const double p = sigmoid(scale * t);
    f1[i] = phi * p;
    f0[i] = phi * (1.0 - p);
    const double wgt = (i == 0 || i == kNodes - 1) ? 0.5 : 1.0;
    z1 += wgt * f1[i];
    z0 += wgt * f0[i];
  }
  // AUROC = integral of f1(t) * F0(t) with F0 the negative-class CDF.
  double F0 = 0.0, auc = 0.0;
  double prev = 0.0;
  for (int i = 0; i < kNodes; ++i) {
    if (i > 0) F0 += 0.5 * (f0[i - 1] + f0[i]) / z0;
    const double cur = f1[i] / z1 * F0;
    if (i > 0) auc += 0.5 * (prev + cur);
    prev = cur;
  }
  return auc;
}

double scale_for_auroc(double target, double mean) {
  if (!(target > 0.5) || target > 0.999) throw ConfigError("latent_auroc_target must lie in (0.5, 0.999]");
  double lo = 1e-6, hi = 500.0;
  if (expected_latent_auroc(hi, mean) < target) throw ConfigError("latent_auroc_target unreachable");
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected_latent_auroc(mid, mean) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SimulationResult simulate(const SimulatorConfig& config, ExecPolicy policy) {
  validate(config);
  std::vector<double> scales;
  for (const auto& sp : config.subpops) scales.push_back(scale_for_auroc(sp.latent_auroc_target, sp.latent_mean));

  SimulationResult out;
  out.records.resize(config.n);
  out.latent.resize(config.n);
  const auto n = static_cast<std::ptrdiff_t>(config.n);

  auto generate = [&](std::ptrdiff_t i) {
    Stream rng(config.seed, static_cast<std::uint64_t>(i), StreamDomain::simulate);
    const double pick = rng.uniform();
    std::size_t k = 0;
    double acc = config.subpops[0].weight;
    while (pick >= acc && k + 1 < config.subpops.size()) acc += config.subpops[++k].weight;
    const auto& sp = config.subpops[k];

    const double t = sp.latent_mean + rng.normal();
    const double u = sigmoid(scales[k] * t);
    const int label = rng.uniform() < u ? 1 : 0;
    const bool rounded = !sp.rounding.disabled();

    PredictionRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "r%06td", i + 1);
    rec.id = id;
    rec.dataset_id = "subpop-" + std::to_string(k);
    rec.label = label;
    const double score = quantize(sp.calibration_map.apply(u), sp.rounding, rng);
    rec.score_pos = score;
    rec.score_neg = rounded ? std::round((1.0 - score) * 100.0) / 100.0 : 1.0 - score;
    rec.score_pos_text = format_score(score, rounded);
    rec.samples_pos.reserve(config.samples_per_record);
    for (std::size_t s = 0; s < config.samples_per_record; ++s) {
      const double jittered = clamp01(u + config.sample_jitter_sd * rng.normal());
      rec.samples_pos.push_back(quantize(sp.calibration_map.apply(jittered), sp.rounding, rng));
    }
    out.records[static_cast<std::size_t>(i)] = std::move(rec);
    out.latent[static_cast<std::size_t>(i)] = u;
  };

  if (policy == ExecPolicy::parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) generate(i);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) generate(i);
  }
  return out;
}

OracleMetrics latent_oracle_metrics(std::span<const PredictionRecord> records, std::span<const double> latent) {
  if (records.size() != latent.size()) throw std::invalid_argument("latent scores not aligned with records");
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw DataError("record " + r.id + " has no label");
    labels.push_back(*r.label);
  }
  const ScoredDataset data(std::move(labels), std::vector<double>(latent.begin(), latent.end()));
  return {auroc(data), prauc(data)};
}

void write_latent(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                  std::span<const double> latent) {
  if (records.size() != latent.size()) throw std::invalid_argument("latent scores not aligned with records");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << nlohmann::json{{"id", records[i].id}, {"latent", latent[i]}}.dump() << '\n';
  }
}

std::vector<double> read_latent(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::unordered_map<std::string, double> by_id;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("latent")) throw DataError("bad latent line");
    by_id[j["id"].get<std::string>()] = j["latent"].get<double>();
  }
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw ConsistencyError("no latent score for record " + r.id);
    out.push_back(it->second);
  }
  return out;
}

}  // namespace opgran
