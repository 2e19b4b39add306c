#include "opgran/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "opgran/digest.hpp"
#include "opgran/errors.hpp"
#include "opgran/version.hpp"

namespace opgran {

MethodMetrics method_metrics(std::string method, const ScoredDataset& data, double resolution, std::size_t flags) {
  if (data.positives() == 0 || data.negatives() == 0) {
    throw DataError(method + ": degenerate class distribution (need both labels)");
  }
  MethodMetrics m;
  m.method = std::move(method);
  m.n_records = data.size();
  m.flags = flags;
  m.granularity = curve_granularity(data, resolution);
  m.prauc_trapezoid = prauc(data, PraucMethod::trapezoid);
  m.prauc_average_precision = prauc(data, PraucMethod::average_precision);
  m.auroc = auroc(data);
  m.ece = ece(data).ece;
  return m;
}

nlohmann::json method_metrics_to_json(const MethodMetrics& m) {
  auto g = granularity_to_json(m.granularity);
  return {{"method", m.method},
          {"n_records", m.n_records},
          {"flags", m.flags},
          {"cardinality", m.granularity.cardinality},
          {"granularity", g},
          {"prauc", {{"trapezoid", m.prauc_trapezoid}, {"average_precision", m.prauc_average_precision}}},
          {"auroc", m.auroc},
          {"ece", m.ece}};
}

ScoredDataset dataset_from_records(std::span<const PredictionRecord> records, const std::string& column) {
  std::vector<int> labels;
  std::vector<double> scores;
  for (const auto& r : records) {
    const auto& v = column == "score_enriched" ? r.score_enriched : r.score_pos;
    if (!r.label || !v) continue;
    labels.push_back(*r.label);
    scores.push_back(*v);
  }
  return ScoredDataset(std::move(labels), std::move(scores));
}

nlohmann::json output_metadata(std::uint64_t seed, double resolution, std::span<const std::filesystem::path> inputs,
                               const std::string& command) {
  auto digests = nlohmann::json::array();
  for (const auto& p : inputs) digests.push_back({{"path", p.filename().string()}, {"sha256", file_sha256(p)}});
  return {{"command", command}, {"seed", seed}, {"resolution", resolution}, {"version", kVersion}, {"inputs", digests}};
}

nlohmann::json analysis_report(const RecordFile& file, double resolution, const nlohmann::json& metadata) {
  std::size_t flagged = 0;
  bool has_enriched = false;
  for (const auto& r : file.records) {
    flagged += r.flagged() ? 1 : 0;
    has_enriched = has_enriched || r.score_enriched.has_value();
  }
  auto methods = nlohmann::json::array();
  methods.push_back(method_metrics_to_json(
      method_metrics("score_pos", dataset_from_records(file.records, "score_pos"), resolution, flagged)));
  if (has_enriched) {
    methods.push_back(method_metrics_to_json(
        method_metrics("score_enriched", dataset_from_records(file.records, "score_enriched"), resolution, flagged)));
  }
  return {{"metadata", metadata},
          {"ingest",
           {{"accepted", file.report.accepted},
            {"flagged", file.report.flagged},
            {"rejected", file.report.rejected}}},
          {"methods", methods},
          {"conventions",
           {{"decision_rule", "positive iff score > threshold"},
            {"sentinel_thresholds", true},
            {"empty_precision", 1.0},
            {"granularity_cells", "final cell clamped"}}}};
}

std::vector<CompareRow> compare_files(std::span<const RecordFile> files, std::span<const std::string> names,
                                      double resolution) {
  if (files.size() < 2) throw ConfigError("compare needs at least two inputs");
  std::map<std::string, std::optional<int>> reference;
  for (const auto& r : files[0].records) reference[r.id] = r.label;

  std::vector<CompareRow> rows;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& file = files[f];
    const std::string name = f < names.size() ? names[f] : "input" + std::to_string(f);
    if (f > 0) {
      if (file.records.size() != reference.size()) throw ConsistencyError(name + ": record ids differ from the first input");
      for (const auto& r : file.records) {
        const auto it = reference.find(r.id);
        if (it == reference.end()) throw ConsistencyError(name + ": unknown record id " + r.id);
        if (it->second != r.label) throw ConsistencyError(name + ": label disagreement for record " + r.id);
      }
    }
    const bool enriched = std::any_of(file.records.begin(), file.records.end(),
                                      [](const PredictionRecord& r) { return r.score_enriched.has_value(); });
    CompareRow row;
    row.method = file.metadata.value("method", name);
    if (file.metadata.contains("calls_per_instance") && file.metadata["calls_per_instance"].is_number()) {
      row.calls_per_instance = file.metadata["calls_per_instance"].get<double>();
    }
    std::size_t flagged = 0;
    for (const auto& r : file.records) flagged += r.flagged() ? 1 : 0;
    row.metrics = method_metrics(row.method, dataset_from_records(file.records, enriched ? "score_enriched" : "score_pos"),
                                 resolution, flagged);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

}  // namespace

std::string compare_to_csv(std::span<const CompareRow> rows) {
  std::string out = "method,calls_per_instance,cardinality,g_pre,g_rec,g_fpr,prauc,auroc\n";
  for (const auto& r : rows) {
    const auto& g = r.metrics.granularity;
    out += r.method + "," + opt_num(r.calls_per_instance) + "," + std::to_string(g.cardinality) + "," +
           opt_num(g.g_precision) + "," + opt_num(g.g_recall) + "," + opt_num(g.g_fpr) + "," +
           num(r.metrics.prauc_trapezoid) + "," + num(r.metrics.auroc) + "\n";
  }
  return out;
}

nlohmann::json compare_to_json(std::span<const CompareRow> rows) {
  auto arr = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& r : rows) {
    const auto& g = r.metrics.granularity;
    arr.push_back({{"method", r.method},
                   {"calls_per_instance", opt(r.calls_per_instance)},
                   {"cardinality", g.cardinality},
                   {"g_pre", opt(g.g_precision)},
                   {"g_rec", opt(g.g_recall)},
                   {"g_fpr", opt(g.g_fpr)},
                   {"prauc", r.metrics.prauc_trapezoid},
                   {"auroc", r.metrics.auroc}});
  }
  return arr;
}

// --- SVG -----------------------------------------------------------------

namespace {

constexpr int kBins = 50;
constexpr double kPlot = 400.0;   // main panel side
constexpr double kLeft = 70.0;
constexpr double kTop = 150.0;
constexpr double kMargin = 100.0;  // marginal panel depth

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::vector<double> histogram_density(std::span<const double> v) {
  std::vector<double> h(kBins, 0.0);
  for (double x : v) h[std::min(kBins - 1, static_cast<int>(std::floor(x * kBins)))] += 1.0;
  for (auto& c : h) c = v.empty() ? 0.0 : c / (static_cast<double>(v.size()) / kBins);
  return h;
}

// Marginal panel: bars plus KDE line. `horizontal` puts bins along x.
std::string marginal(std::span<const double> values, bool horizontal) {
  const auto hist = histogram_density(values);
  std::vector<double> grid(201);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i) / 200.0;
  const auto kde = kde_density(values, grid, ExecPolicy::serial);
  double peak = 1e-12;
  for (double h : hist) peak = std::max(peak, h);
  for (double k : kde) peak = std::max(peak, k);

  std::string s;
  const double bw = kPlot / kBins;
  for (int b = 0; b < kBins; ++b) {
    const double len = hist[static_cast<std::size_t>(b)] / peak * (kMargin - 10.0);
    if (len <= 0.0) continue;
    if (horizontal) {
      s += "<rect x=\"" + fmt(kLeft + b * bw) + "\" y=\"" + fmt(kTop - 5.0 - len) + "\" width=\"" + fmt(bw) +
           "\" height=\"" + fmt(len) + "\" fill=\"#9ecae1\"/>\n";
    } else {
      s += "<rect x=\"" + fmt(kLeft + kPlot + 5.0) + "\" y=\"" + fmt(kTop + kPlot - (b + 1) * bw) + "\" width=\"" +
           fmt(len) + "\" height=\"" + fmt(bw) + "\" fill=\"#9ecae1\"/>\n";
    }
  }
  s += "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double len = kde[i] / peak * (kMargin - 10.0);
    const double along = grid[i] * kPlot;
    if (horizontal) {
      s += fmt(kLeft + along) + "," + fmt(kTop - 5.0 - len) + " ";
    } else {
      s += fmt(kLeft + kPlot + 5.0 + len) + "," + fmt(kTop + kPlot - along) + " ";
    }
  }
  s += "\"/>\n";
  return s;
}

}  // namespace

std::string curve_svg(const OperatingCurve& curve, const std::string& title) {
  const bool pr = curve.space == CurveSpace::PR;
  std::vector<double> xs, ys;
  for (const auto& p : curve.points) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const double width = kLeft + kPlot + kMargin + 30.0;
  const double height = kTop + kPlot + 60.0;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" + fmt(height) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kLeft) + "\" y=\"20\" font-size=\"14\">" + title + "</text>\n";
  s += "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" + fmt(kPlot) + "\" height=\"" + fmt(kPlot) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double f = t / 4.0;
    s += "<text x=\"" + fmt(kLeft + f * kPlot - 8) + "\" y=\"" + fmt(kTop + kPlot + 16) + "\">" + fmt(f) + "</text>\n";
    s += "<text x=\"" + fmt(kLeft - 36) + "\" y=\"" + fmt(kTop + kPlot - f * kPlot + 4) + "\">" + fmt(f) + "</text>\n";
  }
  s += "<text x=\"" + fmt(kLeft + kPlot / 2 - 20) + "\" y=\"" + fmt(kTop + kPlot + 40) + "\">" +
       (pr ? "recall" : "false positive rate") + "</text>\n";
  s += "<text transform=\"translate(" + fmt(kLeft - 50) + "," + fmt(kTop + kPlot / 2 + 20) + ") rotate(-90)\">" +
       (pr ? "precision" : "true positive rate") + "</text>\n";
  s += "<polyline fill=\"none\" stroke=\"#bbbbbb\" points=\"";
  for (const auto& p : curve.points) s += fmt(kLeft + p.x * kPlot) + "," + fmt(kTop + kPlot - p.y * kPlot) + " ";
  s += "\"/>\n";
  for (const auto& p : curve.points) {
    s += "<circle cx=\"" + fmt(kLeft + p.x * kPlot) + "\" cy=\"" + fmt(kTop + kPlot - p.y * kPlot) +
         "\" r=\"2\" fill=\"#d94801\"/>\n";
  }
  s += marginal(xs, true);
  s += marginal(ys, false);
  s += "</svg>\n";
  return s;
}

}  // namespace opgran
