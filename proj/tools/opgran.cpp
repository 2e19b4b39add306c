#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "opgran/bias.hpp"
#include "opgran/enrich_sup.hpp"
#include "opgran/enrich_unsup.hpp"
#include "opgran/errors.hpp"
#include "opgran/gateway.hpp"
#include "opgran/records.hpp"
#include "opgran/report.hpp"
#include "opgran/simulator.hpp"
#include "opgran/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace opgran;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  double resolution = kDefaultResolution;
  std::string out;
  std::string format = "json";
};

void require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void emit_records(const Globals& g, std::span<const PredictionRecord> records, const json& meta) {
  const fs::path out(g.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (g.format == "csv") {
    write_records_csv(out, records);
  } else {
    write_records(out, records, meta);
  }
}

double calls_of(const RecordFile& f) {
  const auto it = f.metadata.find("calls_per_instance");
  return it != f.metadata.end() && it->is_number() ? it->get<double>() : 1.0;
}

RecordFile load_nonempty(const fs::path& path) {
  auto file = load_records(path);
  if (file.records.empty()) throw DataError(path.string() + ": no valid records");
  for (const auto& e : file.report.errors) {
    std::cerr << path.string() << ":" << e.line << ": rejected: " << e.message << "\n";
  }
  return file;
}

// --- commands --------------------------------------------------------------

int cmd_simulate(const Globals& g, const std::string& config_path, bool seed_given) {
  require_out(g);
  auto cfg = simulator_config_from_json(read_json_file(config_path));
  if (seed_given) cfg.seed = g.seed;
  const auto sim = simulate(cfg);
  const fs::path inputs[] = {config_path};
  auto meta = output_metadata(cfg.seed, g.resolution, inputs, "simulate");
  meta["method"] = "simulated";
  meta["calls_per_instance"] = 1;
  emit_records(g, sim.records, meta);
  write_latent(g.out + ".latent.jsonl", sim.records, sim.latent);
  std::cerr << "wrote " << sim.records.size() << " records to " << g.out << "\n";
  return 0;
}

int cmd_analyze(const Globals& g, const std::string& preds, const std::string& plots_dir) {
  require_out(g);
  const auto file = load_nonempty(preds);
  const fs::path inputs[] = {preds};
  const auto meta = output_metadata(g.seed, g.resolution, inputs, "analyze");
  const auto report = analysis_report(file, g.resolution, meta);
  if (g.format == "csv") {
    std::vector<CompareRow> rows;
    for (const char* column : {"score_pos", "score_enriched"}) {
      bool any = false;
      for (const auto& r : file.records) any = any || (std::string(column) == "score_pos" ? r.score_pos : r.score_enriched);
      if (!any) continue;
      rows.push_back({column, calls_of(file), method_metrics(column, dataset_from_records(file.records, column), g.resolution)});
    }
    write_text(g.out, compare_to_csv(rows));
  } else {
    write_json(g.out, report);
  }
  if (!plots_dir.empty()) {
    fs::create_directories(plots_dir);
    const bool enriched = report["methods"].size() > 1;
    const auto data = dataset_from_records(file.records, enriched ? "score_enriched" : "score_pos");
    write_text(fs::path(plots_dir) / "pr.svg", curve_svg(build_curve(data, CurveSpace::PR), "PR curve"));
    write_text(fs::path(plots_dir) / "roc.svg", curve_svg(build_curve(data, CurveSpace::ROC), "ROC curve"));
  }
  return 0;
}

int cmd_compare(const Globals& g, const std::vector<std::string>& inputs) {
  require_out(g);
  std::vector<RecordFile> files;
  std::vector<std::string> names;
  std::vector<fs::path> paths;
  for (const auto& p : inputs) {
    files.push_back(load_nonempty(p));
    names.push_back(fs::path(p).stem().string());
    paths.emplace_back(p);
  }
  const auto rows = compare_files(files, names, g.resolution);
  const fs::path base = fs::path(g.out).replace_extension();
  write_text(fs::path(base).replace_extension(".csv"), compare_to_csv(rows));
  json j = {{"metadata", output_metadata(g.seed, g.resolution, paths, "compare")}, {"rows", compare_to_json(rows)}};
  write_json(fs::path(base).replace_extension(".json"), j);
  return 0;
}

int cmd_enrich_unsupervised(const Globals& g, const std::string& preds) {
  require_out(g);
  auto file = load_nonempty(preds);
  std::vector<double> scores;
  for (const auto& r : file.records) {
    if (r.score_pos) scores.push_back(*r.score_pos);
  }
  const auto enriched = enrich_unsupervised(scores, g.seed);
  std::size_t k = 0;
  for (auto& r : file.records) {
    if (r.score_pos) r.score_enriched = enriched.enriched[k++];
  }
  const fs::path inputs[] = {preds};
  auto meta = output_metadata(g.seed, g.resolution, inputs, "enrich unsupervised");
  meta["method"] = "proposed-unsupervised";
  meta["calls_per_instance"] = calls_of(file);
  emit_records(g, file.records, meta);
  return 0;
}

struct TrainArgs {
  std::string preds;
  std::string variant = "one_call";
  std::string noise_mode = "adaptive";
  std::vector<double> lrs;
  std::vector<double> lambdas;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double val_fraction = 0.2;
  std::size_t batch_size = 0;
  bool no_grid = false;
  std::string log_path;
};

int cmd_enrich_train(const Globals& g, const TrainArgs& a) {
  require_out(g);
  const auto file = load_nonempty(a.preds);
  TrainConfig cfg;
  cfg.variant = parse_variant(a.variant);
  cfg.noise_mode = parse_noise_mode(a.noise_mode);
  cfg.seed = g.seed;
  cfg.max_epochs = a.max_epochs;
  cfg.patience = a.patience;
  cfg.val_fraction = a.val_fraction;
  cfg.batch_size = a.batch_size;
  if (!a.lrs.empty()) cfg.learning_rates = a.lrs;
  if (!a.lambdas.empty()) cfg.lambdas = a.lambdas;
  if (a.no_grid) {
    if (a.lrs.empty()) cfg.learning_rates = {0.05};
    if (a.lambdas.empty()) cfg.lambdas = {0.01};
  }
  const auto rows = build_training_rows(file.records, cfg.variant);
  const auto result = train(rows, cfg);
  const auto& best = result.log.cells[result.log.best_cell];

  json model = model_to_json(result.model);
  const fs::path inputs[] = {a.preds};
  model["metadata"] = output_metadata(g.seed, g.resolution, inputs, "enrich train");
  model["validation"] = {{"prauc", best.best_val_prauc},
                         {"learning_rate", best.learning_rate},
                         {"lambda", best.lambda},
                         {"best_epoch", best.best_epoch}};
  write_json(g.out, model);
  if (!a.log_path.empty()) write_json(a.log_path, train_log_to_json(result.log));
  std::cerr << "best cell lr=" << best.learning_rate << " lambda=" << best.lambda
            << " validation PRAUC=" << best.best_val_prauc << "\n";
  return 0;
}

int cmd_enrich_apply(const Globals& g, const std::string& model_path, const std::string& preds) {
  require_out(g);
  const auto model = model_from_json(read_json_file(model_path));
  auto file = load_nonempty(preds);
  std::vector<PredictionRecord> usable;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < file.records.size(); ++i) {
    if (file.records[i].score_pos) {
      usable.push_back(file.records[i]);
      index.push_back(i);
    }
  }
  const auto enriched = enrich_supervised(model, usable, g.seed);
  for (std::size_t k = 0; k < index.size(); ++k) file.records[index[k]].score_enriched = enriched.enriched[k];
  const fs::path inputs[] = {model_path, preds};
  auto meta = output_metadata(g.seed, g.resolution, inputs, "enrich apply");
  meta["method"] = model.variant == Variant::one_call ? "proposed-1call" : "proposed-2call";
  meta["calls_per_instance"] = model.variant == Variant::one_call ? 1 : 2;
  emit_records(g, file.records, meta);
  return 0;
}

int cmd_bias(const Globals& g, const std::string& preds) {
  require_out(g);
  const auto file = load_nonempty(preds);
  const auto strings = score_strings(file.records);
  const auto hist = char_position_counts(strings);
  const auto summary = roundness_summary(strings);
  const fs::path inputs[] = {preds};
  json j = {{"metadata", output_metadata(g.seed, g.resolution, inputs, "bias")}, {"bias", bias_to_json(hist, summary)}};
  write_json(g.out, j);
  return 0;
}

struct GatewayArgs {
  std::string instances;
  std::string endpoint;
  std::string template_name = "baseline";
  std::string context;
  std::string context_file;
  std::vector<std::string> classes{"positive", "negative"};
  std::string model = "model";
  double temperature = 0.0;
  std::size_t samples = 1;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  double backoff = 0.2;
  double timeout = 60.0;
  std::string api_key_env = "LLM_API_KEY";
  std::string reducer = "random";
  bool cot = false;
};

int cmd_gateway(const Globals& g, const GatewayArgs& a, bool two_stage) {
  require_out(g);
  std::string context = a.context;
  if (!a.context_file.empty()) {
    std::ifstream in(a.context_file);
    if (!in) throw ConfigError("cannot read " + a.context_file);
    std::stringstream ss;
    ss << in.rdbuf();
    context = ss.str();
  }
  const auto tpl = parse_template(two_stage ? (a.cot ? "two_stage_cot" : "two_stage") : a.template_name, context, a.classes);
  GatewayConfig cfg;
  cfg.endpoint_url = a.endpoint;
  cfg.model_name = a.model;
  cfg.temperature = a.temperature;
  cfg.n_samples = a.samples;
  cfg.max_in_flight = a.max_in_flight;
  cfg.retry = {a.max_attempts, a.backoff};
  cfg.timeout_s = a.timeout;
  cfg.api_key_env = a.api_key_env;
  cfg.seed = g.seed;
  if (a.reducer == "random") {
    cfg.reducer = ListReducer::random;
  } else if (a.reducer == "mean") {
    cfg.reducer = ListReducer::mean;
  } else if (a.reducer == "median") {
    cfg.reducer = ListReducer::median;
  } else {
    throw ConfigError("reducer must be random, mean or median");
  }
  const auto instances = load_instances(a.instances);
  const auto result = two_stage ? two_stage_classify(instances, a.cot ? TwoStageVariant::cot : TwoStageVariant::plain, tpl, cfg)
                                : classify(instances, tpl, cfg);
  const fs::path inputs[] = {a.instances};
  auto meta = output_metadata(g.seed, g.resolution, inputs, two_stage ? "gateway two-stage" : "gateway classify");
  meta["method"] = to_string(tpl.kind);
  meta["calls_per_instance"] = two_stage ? 2 : (cfg.temperature > 0.0 ? cfg.n_samples : 1);
  meta["temperature"] = cfg.temperature;
  meta["gateway"] = gateway_stats_to_json(result.stats);
  emit_records(g, result.records, meta);
  std::cerr << "requests=" << result.stats.requests << " retries=" << result.stats.retries
            << " failed=" << result.stats.failed_requests << " flagged=" << result.stats.flagged_records << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Operating-point analysis and score enrichment for verbalized classifier scores"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed recorded in every output");
  app.add_option("--resolution", g.resolution, "Granularity search resolution")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output path");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "csv"}));

  std::function<int()> action;

  auto* sim = app.add_subcommand("simulate", "Generate synthetic verbalized predictions");
  std::string sim_config;
  sim->add_option("--config", sim_config, "Simulator config JSON")->required();
  sim->callback([&] { action = [&] { return cmd_simulate(g, sim_config, seed_opt->count() > 0); }; });

  auto* analyze = app.add_subcommand("analyze", "Cardinality, granularity, AUCs and ECE of a prediction file");
  std::string an_preds, an_plots;
  analyze->add_option("--preds", an_preds, "Prediction JSONL/CSV")->required();
  analyze->add_option("--plots", an_plots, "Directory for pr.svg and roc.svg");
  analyze->callback([&] { action = [&] { return cmd_analyze(g, an_preds, an_plots); }; });

  auto* compare = app.add_subcommand("compare", "Side-by-side metrics of several prediction files");
  std::vector<std::string> cmp_inputs;
  compare->add_option("inputs", cmp_inputs, "Prediction files")->required()->expected(2, -1);
  compare->callback([&] { action = [&] { return cmd_compare(g, cmp_inputs); }; });

  auto* enrich = app.add_subcommand("enrich", "Score enrichment");
  enrich->require_subcommand(1);
  auto* unsup = enrich->add_subcommand("unsupervised", "Rank-preserving uniform noise");
  std::string un_preds;
  unsup->add_option("--preds", un_preds)->required();
  unsup->callback([&] { action = [&] { return cmd_enrich_unsupervised(g, un_preds); }; });

  auto* trn = enrich->add_subcommand("train", "Train the noise calibrator");
  TrainArgs ta;
  trn->add_option("--preds", ta.preds)->required();
  trn->add_option("--variant", ta.variant, "one-call or two-call");
  trn->add_option("--noise-mode", ta.noise_mode, "adaptive, none, input-additive or feature");
  trn->add_option("--lr", ta.lrs, "Learning rates to search");
  trn->add_option("--lambda", ta.lambdas, "Penalty weights to search");
  trn->add_option("--max-epochs", ta.max_epochs);
  trn->add_option("--patience", ta.patience);
  trn->add_option("--val-fraction", ta.val_fraction);
  trn->add_option("--batch-size", ta.batch_size, "0 picks 64 up to 4096 training rows, else 256");
  trn->add_flag("--no-grid", ta.no_grid, "Single cell: lr 0.05, lambda 0.01");
  trn->add_option("--log", ta.log_path, "Write the per-epoch training log here");
  trn->callback([&] { action = [&] { return cmd_enrich_train(g, ta); }; });

  auto* apply = enrich->add_subcommand("apply", "Apply a trained calibrator");
  std::string ap_model, ap_preds;
  apply->add_option("--model", ap_model)->required();
  apply->add_option("--preds", ap_preds)->required();
  apply->callback([&] { action = [&] { return cmd_enrich_apply(g, ap_model, ap_preds); }; });

  auto* bias = app.add_subcommand("bias", "Character-position and roundness statistics of score strings");
  std::string bias_preds;
  bias->add_option("--preds", bias_preds)->required();
  bias->callback([&] { action = [&] { return cmd_bias(g, bias_preds); }; });

  auto* gw = app.add_subcommand("gateway", "Query a chat-completion endpoint");
  gw->require_subcommand(1);
  GatewayArgs ga;
  auto add_gateway_opts = [&](CLI::App* c) {
    c->add_option("--instances", ga.instances, "JSONL with id, text, optional label")->required();
    c->add_option("--endpoint", ga.endpoint, "Chat-completion URL")->required();
    c->add_option("--context", ga.context, "Task description");
    c->add_option("--context-file", ga.context_file, "Task description file");
    c->add_option("--classes", ga.classes, "Class labels, positive first")->delimiter(',');
    c->add_option("--model", ga.model);
    c->add_option("--temperature", ga.temperature);
    c->add_option("--samples", ga.samples);
    c->add_option("--max-in-flight", ga.max_in_flight);
    c->add_option("--max-attempts", ga.max_attempts);
    c->add_option("--backoff", ga.backoff, "Base backoff in seconds");
    c->add_option("--timeout", ga.timeout, "Request timeout in seconds");
    c->add_option("--api-key-env", ga.api_key_env, "Environment variable holding the API key");
    c->add_option("--reducer", ga.reducer, "random, mean or median for list outputs");
  };
  auto* gw_cls = gw->add_subcommand("classify", "Single-call prompting, optionally sampled");
  add_gateway_opts(gw_cls);
  gw_cls->add_option("--template", ga.template_name, "Prompt template, e.g. baseline or score_range(100)");
  gw_cls->callback([&] { action = [&] { return cmd_gateway(g, ga, false); }; });
  auto* gw_two = gw->add_subcommand("two-stage", "Decision call then confidence call");
  add_gateway_opts(gw_two);
  gw_two->add_flag("--cot", ga.cot, "Ask for step-by-step reasoning");
  gw_two->callback([&] { action = [&] { return cmd_gateway(g, ga, true); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return action ? action() : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ConsistencyError& e) {
    std::cerr << "consistency error: " << e.what() << "\n";
    return 4;
  } catch (const NetworkError& e) {
    std::cerr << "network error: " << e.what() << "\n";
    return 5;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
