// Eigen's own OpenMP GEMM would change summation order with the thread count.
#define EIGEN_DONT_PARALLELIZE

#include "opgran/enrich_sup.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "opgran/errors.hpp"
#include "opgran/metrics.hpp"
#include "opgran/rng.hpp"

namespace opgran {

std::string to_string(Variant v) { return v == Variant::one_call ? "one_call" : "two_call"; }

std::string to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::adaptive:
      return "adaptive";
    case NoiseMode::none:
      return "none";
    case NoiseMode::input_additive:
      return "input_additive";
    case NoiseMode::feature:
      return "feature";
  }
  return "adaptive";
}

namespace {

std::string normalize_name(std::string_view text) {
  std::string s(text);
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

}  // namespace

Variant parse_variant(std::string_view text) {
  const auto s = normalize_name(text);
  if (s == "one_call") return Variant::one_call;
  if (s == "two_call") return Variant::two_call;
  throw ConfigError("unknown variant: " + std::string(text));
}

NoiseMode parse_noise_mode(std::string_view text) {
  const auto s = normalize_name(text);
  if (s == "adaptive") return NoiseMode::adaptive;
  if (s == "none") return NoiseMode::none;
  if (s == "input_additive") return NoiseMode::input_additive;
  if (s == "feature") return NoiseMode::feature;
  throw ConfigError("unknown noise mode: " + std::string(text));
}

int EnrichmentModel::feature_count() const noexcept { return variant == Variant::one_call ? 2 : 4; }

EnrichmentModel init_model(Variant variant, NoiseMode mode, std::uint64_t seed) {
  EnrichmentModel m;
  m.variant = variant;
  m.noise_mode = mode;
  const int features = m.feature_count();
  const int hidden = 1 << (features + 1);
  const int input = features + (mode == NoiseMode::feature ? 1 : 0);
  m.layer_dims = {input, hidden, hidden, 1};
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    const int fan_in = m.layer_dims[l];
    const int fan_out = m.layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Stream rng(seed, l, StreamDomain::train_init);
    Eigen::MatrixXd W(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) W(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
    }
    m.weights.push_back(std::move(W));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

namespace {

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

void check_shape(const EnrichmentModel& model, Eigen::Index features) {
  if (model.weights.size() != 3 || model.biases.size() != 3) throw std::invalid_argument("model must have 3 layers");
  if (features != model.feature_count()) throw std::invalid_argument("feature length does not match model");
}

Eigen::MatrixXd network_input(const EnrichmentModel& model, const Batch& batch) {
  const auto rows = batch.features.rows();
  switch (model.noise_mode) {
    case NoiseMode::input_additive: {
      if (batch.eps.rows() != rows || batch.eps.cols() != batch.features.cols()) {
        throw std::invalid_argument("input_additive mode needs one noise draw per feature");
      }
      return batch.features + kInputNoiseSd * batch.eps;
    }
    case NoiseMode::feature: {
      Eigen::MatrixXd x(rows, batch.features.cols() + 1);
      x << batch.features, batch.z;
      return x;
    }
    default:
      return batch.features;
  }
}

Eigen::VectorXd noise_term(const EnrichmentModel& model, const Batch& batch) {
  if (model.noise_mode == NoiseMode::adaptive) return batch.z / model.w;
  return Eigen::VectorXd::Constant(batch.features.rows(), 1.0 / model.w);
}

struct Activations {
  Eigen::MatrixXd x, a1, h1, a2, h2;
  Eigen::VectorXd out, logit, prob;
};

Activations run(const EnrichmentModel& model, const Batch& batch) {
  check_shape(model, batch.features.cols());
  if (batch.z.size() != batch.features.rows()) throw std::invalid_argument("one z per row required");
  Activations act;
  act.x = network_input(model, batch);
  act.a1 = (act.x * model.weights[0].transpose()).rowwise() + model.biases[0].transpose();
  act.h1 = act.a1.cwiseMax(0.0);
  act.a2 = (act.h1 * model.weights[1].transpose()).rowwise() + model.biases[1].transpose();
  act.h2 = act.a2.cwiseMax(0.0);
  act.out = (act.h2 * model.weights[2].transpose()).col(0).array() + model.biases[2](0);
  act.logit = act.out + noise_term(model, batch);
  act.prob = act.logit.unaryExpr([](double v) { return sigmoid(v); });
  return act;
}

// log sig(v) without forming 1 - p, which loses digits near p = 1.
double log_sigmoid(double v) noexcept { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); }

const double kLogProbClamp = std::log(kProbClamp);

// Cross-entropy of a logit with both log-probabilities clamped at log(1e-12),
// the same function as clamping p and 1 - p at 1e-12.
double bce_logit(double v, double y) noexcept {
  return -(y * std::max(log_sigmoid(v), kLogProbClamp) + (1.0 - y) * std::max(log_sigmoid(-v), kLogProbClamp));
}

}  // namespace

double forward(const EnrichmentModel& model, std::span<const double> features, double z,
               std::span<const double> input_noise) {
  Batch b;
  b.features = Eigen::Map<const Eigen::RowVectorXd>(features.data(), static_cast<Eigen::Index>(features.size()));
  b.z = Eigen::VectorXd::Constant(1, z);
  if (model.noise_mode == NoiseMode::input_additive) {
    if (input_noise.size() != features.size()) throw std::invalid_argument("input noise length mismatch");
    b.eps = Eigen::Map<const Eigen::RowVectorXd>(input_noise.data(), static_cast<Eigen::Index>(input_noise.size()));
  }
  return run(model, b).prob(0);
}

Eigen::VectorXd forward(const EnrichmentModel& model, const Batch& batch) { return run(model, batch).prob; }

double loss(const EnrichmentModel& model, const Batch& batch) {
  if (batch.features.rows() == 0) throw std::invalid_argument("empty batch");
  const auto act = run(model, batch);
  double total = 0.0;
  for (Eigen::Index i = 0; i < act.logit.size(); ++i) total += bce_logit(act.logit(i), batch.labels(i));
  return total / static_cast<double>(act.logit.size()) + model.lambda * std::abs(model.w);
}

Gradients gradients(const EnrichmentModel& model, const Batch& batch) {
  const auto rows = batch.features.rows();
  if (rows == 0) throw std::invalid_argument("empty batch");
  const auto act = run(model, batch);
  const double inv_n = 1.0 / static_cast<double>(rows);

  Gradients g;
  Eigen::VectorXd d_logit(rows);
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double v = act.logit(i);
    const double y = batch.labels(i);
    total += bce_logit(v, y);
    // d/dlogit of -y log p - (1-y) log(1-p); zero where the clamp is active.
    double d = 0.0;
    if (y > 0.0 && log_sigmoid(v) > kLogProbClamp) d -= y * sigmoid(-v);
    if (y < 1.0 && log_sigmoid(-v) > kLogProbClamp) d += (1.0 - y) * sigmoid(v);
    d_logit(i) = d * inv_n;
  }
  g.loss = total * inv_n + model.lambda * std::abs(model.w);

  g.weights.resize(3);
  g.biases.resize(3);
  g.weights[2] = d_logit.transpose() * act.h2;
  g.biases[2] = Eigen::VectorXd::Constant(1, d_logit.sum());
  const Eigen::MatrixXd d_a2 = ((d_logit * model.weights[2]).array() * (act.a2.array() > 0.0).cast<double>()).matrix();
  g.weights[1] = d_a2.transpose() * act.h1;
  g.biases[1] = d_a2.colwise().sum().transpose();
  const Eigen::MatrixXd d_a1 = ((d_a2 * model.weights[1]).array() * (act.a1.array() > 0.0).cast<double>()).matrix();
  g.weights[0] = d_a1.transpose() * act.x;
  g.biases[0] = d_a1.colwise().sum().transpose();

  const double w2 = model.w * model.w;
  if (model.noise_mode == NoiseMode::adaptive) {
    g.w = -(d_logit.array() * batch.z.array()).sum() / w2;
  } else {
    g.w = -d_logit.sum() / w2;
  }
  if (model.w != 0.0) g.w += model.lambda * (model.w > 0.0 ? 1.0 : -1.0);
  return g;
}

std::vector<double> record_features(const PredictionRecord& rec, Variant variant, std::size_t sample) {
  if (!rec.score_pos) throw DataError("record " + rec.id + " has no score_pos");
  std::vector<double> f{*rec.score_pos, rec.score_neg.value_or(1.0 - *rec.score_pos)};
  if (variant == Variant::two_call) {
    if (sample >= rec.samples_pos.size()) throw DataError("record " + rec.id + " lacks a temperature-1 sample");
    f.push_back(rec.samples_pos[sample]);
    f.push_back(1.0 - rec.samples_pos[sample]);
  }
  return f;
}

TrainingRows build_training_rows(std::span<const PredictionRecord> records, Variant variant) {
  std::vector<std::vector<double>> feats;
  TrainingRows rows;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (!rec.label || !rec.score_pos) continue;
    const std::size_t copies = variant == Variant::one_call ? 1 : rec.samples_pos.size();
    if (copies == 0) throw DataError("record " + rec.id + " lacks a temperature-1 sample");
    for (std::size_t s = 0; s < copies; ++s) {
      feats.push_back(record_features(rec, variant, s));
      rows.labels.push_back(*rec.label);
      rows.record.push_back(r);
      rows.primary.push_back(s == 0);
    }
  }
  const auto width = variant == Variant::one_call ? 2 : 4;
  rows.features.resize(static_cast<Eigen::Index>(feats.size()), width);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (int c = 0; c < width; ++c) rows.features(static_cast<Eigen::Index>(i), c) = feats[i][static_cast<std::size_t>(c)];
  }
  return rows;
}

namespace detail {

double min_abs_preactivation(const EnrichmentModel& model, const Batch& batch) {
  const auto act = run(model, batch);
  return std::min(act.a1.cwiseAbs().minCoeff(), act.a2.cwiseAbs().minCoeff());
}

std::size_t effective_batch_size(std::size_t requested, std::size_t rows) {
  if (requested > 0) return std::min(requested, rows);
  return std::min<std::size_t>(rows, rows <= 4096 ? 64 : 256);
}

}  // namespace detail

namespace {

struct Split {
  std::vector<std::size_t> train;  // row indices
  std::vector<std::size_t> val;
};

// Stratified by label at record level so both splits see both classes.
Split split_rows(const TrainingRows& rows, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> record_label;  // record -> label, first seen
  std::vector<std::size_t> pos_records, neg_records;
  std::vector<char> seen;
  for (std::size_t i = 0; i < rows.record.size(); ++i) {
    const auto r = rows.record[i];
    if (r >= seen.size()) seen.resize(r + 1, 0);
    if (seen[r]) continue;
    seen[r] = 1;
    (rows.labels[i] == 1 ? pos_records : neg_records).push_back(r);
  }
  std::vector<char> in_val(seen.size(), 0);
  std::uint64_t key = 0;
  for (auto* group : {&pos_records, &neg_records}) {
    Stream rng(seed, key++, StreamDomain::split);
    auto& g = *group;
    for (std::size_t i = g.size(); i > 1; --i) std::swap(g[i - 1], g[rng.below(i)]);
    auto take = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(g.size())));
    take = std::clamp<std::size_t>(take, 1, g.size() - 1);
    for (std::size_t i = 0; i < take; ++i) in_val[g[i]] = 1;
  }
  Split s;
  for (std::size_t i = 0; i < rows.record.size(); ++i) {
    if (!in_val[rows.record[i]]) {
      s.train.push_back(i);
    } else if (rows.primary[i]) {
      s.val.push_back(i);
    }
  }
  return s;
}

void fill_noise(Batch& b, Eigen::Index row, std::uint64_t seed, std::uint64_t key, StreamDomain domain) {
  Stream rng(seed, key, domain);
  b.z(row) = rng.normal();
  for (Eigen::Index c = 0; c < b.eps.cols(); ++c) b.eps(row, c) = rng.normal();
}

Batch gather(const TrainingRows& rows, std::span<const std::size_t> idx) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto f = rows.features.cols();
  b.features.resize(n, f);
  b.labels.resize(n);
  b.z.resize(n);
  b.eps.resize(n, f);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]);
    b.features.row(i) = rows.features.row(r);
    b.labels(i) = rows.labels[static_cast<std::size_t>(r)];
  }
  return b;
}

struct Adam {
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  double m_scale = 0.0, v_scale = 0.0;
  long long t = 0;

  explicit Adam(const EnrichmentModel& m) {
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      mw.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
      vw.push_back(mw.back());
      mb.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
      vb.push_back(mb.back());
    }
  }

  void step(EnrichmentModel& m, const Gradients& g, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto update = [&](auto& param, auto& mom, auto& vel, const auto& grad) {
      mom = beta1 * mom + (1.0 - beta1) * grad;
      vel = beta2 * vel + (1.0 - beta2) * grad.cwiseProduct(grad);
      param.array() -= lr * (mom.array() / c1) / ((vel.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      update(m.weights[l], mw[l], vw[l], g.weights[l]);
      update(m.biases[l], mb[l], vb[l], g.biases[l]);
    }
    m_scale = beta1 * m_scale + (1.0 - beta1) * g.w;
    v_scale = beta2 * v_scale + (1.0 - beta2) * g.w * g.w;
    m.w -= lr * (m_scale / c1) / (std::sqrt(v_scale / c2) + eps);
    m.w = std::max(m.w, kMinNoiseScale);
  }
};

bool finite(const Gradients& g) {
  if (!std::isfinite(g.loss) || !std::isfinite(g.w)) return false;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite()) return false;
  }
  return true;
}

struct CellResult {
  EnrichmentModel model;
  CellLog log;
};

CellResult train_cell(const TrainingRows& rows, const Split& split, const Batch& val, const TrainConfig& cfg,
                      const EnrichmentModel& init, double lr, double lambda) {
  CellResult res{init, {}};
  res.model.lambda = lambda;
  res.log.learning_rate = lr;
  res.log.lambda = lambda;
  EnrichmentModel model = res.model;
  Adam adam(model);

  std::vector<int> val_labels(static_cast<std::size_t>(val.labels.size()));
  for (std::size_t i = 0; i < val_labels.size(); ++i) val_labels[i] = static_cast<int>(val.labels(static_cast<Eigen::Index>(i)));

  const std::size_t batch_size = detail::effective_batch_size(cfg.batch_size, split.train.size());
  const auto n_rows = static_cast<std::uint64_t>(rows.record.size());
  std::vector<std::size_t> order = split.train;
  double best = -1.0;
  std::size_t stall = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Stream shuffle(cfg.seed, epoch, StreamDomain::train_shuffle);
    order = split.train;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += batch_size) {
      const std::size_t hi = std::min(lo + batch_size, order.size());
      Batch b = gather(rows, std::span<const std::size_t>(order.data() + lo, hi - lo));
      for (Eigen::Index i = 0; i < b.features.rows(); ++i) {
        fill_noise(b, i, cfg.seed, epoch * n_rows + order[lo + static_cast<std::size_t>(i)], StreamDomain::train_noise);
      }
      const auto g = gradients(model, b);
      if (!finite(g)) {
        res.log.aborted = true;
        res.log.message = "non-finite loss at epoch " + std::to_string(epoch);
        return res;
      }
      epoch_loss += g.loss * static_cast<double>(hi - lo);
      adam.step(model, g, lr);
    }
    epoch_loss /= static_cast<double>(order.size());

    const auto p = forward(model, val);
    const double val_prauc =
        prauc(ScoredDataset(val_labels, std::vector<double>(p.data(), p.data() + p.size())), PraucMethod::trapezoid);
    res.log.epochs.push_back({epoch, epoch_loss, val_prauc});
    if (val_prauc > best) {
      best = val_prauc;
      res.model = model;
      res.log.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      break;
    }
  }
  res.log.best_val_prauc = best;
  return res;
}

}  // namespace

TrainResult train(const TrainingRows& rows, const TrainConfig& cfg) {
  if (cfg.learning_rates.empty() || cfg.lambdas.empty()) throw ConfigError("empty hyperparameter grid");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (cfg.max_epochs < 1 || cfg.patience < 1 || cfg.patience > cfg.max_epochs) {
    throw ConfigError("need 1 <= patience <= max_epochs");
  }
  for (double lr : cfg.learning_rates) {
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  }
  for (double l : cfg.lambdas) {
    if (!(l >= 0.0)) throw ConfigError("lambdas must be non-negative");
  }
  const auto expected = cfg.variant == Variant::one_call ? 2 : 4;
  if (rows.features.cols() != expected) throw ConfigError("training rows do not match the variant");
  if (rows.record.size() < 20) throw DataError("need at least 20 training rows");
  const auto positives = std::count(rows.labels.begin(), rows.labels.end(), 1);
  if (positives == 0 || positives == static_cast<long>(rows.labels.size())) {
    throw DataError("training data has a single class");
  }

  const Split split = split_rows(rows, cfg.val_fraction, cfg.seed);
  if (split.train.empty() || split.val.empty()) throw DataError("too few records to split");
  Batch val = gather(rows, split.val);
  for (Eigen::Index i = 0; i < val.features.rows(); ++i) {
    fill_noise(val, i, cfg.seed, split.val[static_cast<std::size_t>(i)], StreamDomain::validation_noise);
  }

  const EnrichmentModel init = init_model(cfg.variant, cfg.noise_mode, cfg.seed);
  const std::size_t n_cells = cfg.learning_rates.size() * cfg.lambdas.size();
  std::vector<CellResult> cells(n_cells);
  auto run_cell = [&](std::ptrdiff_t c) {
    const auto i = static_cast<std::size_t>(c);
    cells[i] = train_cell(rows, split, val, cfg, init, cfg.learning_rates[i / cfg.lambdas.size()],
                          cfg.lambdas[i % cfg.lambdas.size()]);
  };
  const auto n = static_cast<std::ptrdiff_t>(n_cells);
  if (cfg.policy == ExecPolicy::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t c = 0; c < n; ++c) run_cell(c);
  } else {
    for (std::ptrdiff_t c = 0; c < n; ++c) run_cell(c);
  }

  TrainResult out;
  out.log.train_rows = split.train.size();
  out.log.val_rows = split.val.size();
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < n_cells; ++i) {
    out.log.cells.push_back(cells[i].log);
    if (cells[i].log.aborted || cells[i].log.epochs.empty()) continue;
    if (!best || cells[i].log.best_val_prauc > cells[*best].log.best_val_prauc) best = i;
  }
  if (!best) throw DataError("every grid cell diverged");
  out.log.best_cell = *best;
  out.model = std::move(cells[*best].model);
  return out;
}

EnrichedScores enrich_supervised(const EnrichmentModel& model, std::span<const PredictionRecord> records,
                                 std::uint64_t seed) {
  EnrichedScores out;
  out.seed = seed;
  out.original.reserve(records.size());
  out.enriched.reserve(records.size());
  const auto nf = static_cast<std::size_t>(model.feature_count());
  std::vector<double> eps(nf);
  for (const auto& rec : records) {
    const auto f = record_features(rec, model.variant, 0);
    Stream rng(seed, hash_key(rec.id), StreamDomain::enrich_supervised);
    const double z = rng.normal();
    for (auto& e : eps) e = rng.normal();
    out.original.push_back(*rec.score_pos);
    out.enriched.push_back(forward(model, f, z, eps));
  }
  return out;
}

nlohmann::json model_to_json(const EnrichmentModel& m) {
  auto weights = nlohmann::json::array();
  auto biases = nlohmann::json::array();
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.weights[l].cols()));
      for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) row[static_cast<std::size_t>(c)] = m.weights[l](r, c);
      rows.push_back(row);
    }
    weights.push_back(rows);
    biases.push_back(std::vector<double>(m.biases[l].data(), m.biases[l].data() + m.biases[l].size()));
  }
  auto spec = nlohmann::json::array({"score_pos", "score_neg"});
  if (m.variant == Variant::two_call) {
    spec.push_back("sample_pos");
    spec.push_back("sample_neg");
  }
  if (m.noise_mode == NoiseMode::feature) spec.push_back("z");
  return {{"version", m.version},   {"variant", to_string(m.variant)},
          {"noise_mode", to_string(m.noise_mode)}, {"layer_dims", m.layer_dims},
          {"weights", weights},     {"biases", biases},
          {"w", m.w},               {"lambda", m.lambda},
          {"feature_spec", spec}};
}

EnrichmentModel model_from_json(const nlohmann::json& j) {
  try {
    EnrichmentModel m;
    m.version = j.at("version").get<int>();
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.noise_mode = parse_noise_mode(j.at("noise_mode").get<std::string>());
    m.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    m.w = j.at("w").get<double>();
    m.lambda = j.at("lambda").get<double>();
    const auto reference = init_model(m.variant, m.noise_mode, 0);
    if (m.layer_dims != reference.layer_dims) throw ConfigError("layer_dims do not match variant and noise mode");
    const auto& W = j.at("weights");
    const auto& B = j.at("biases");
    if (W.size() != 3 || B.size() != 3) throw ConfigError("model needs 3 layers");
    for (std::size_t l = 0; l < 3; ++l) {
      const int out = m.layer_dims[l + 1], in = m.layer_dims[l];
      Eigen::MatrixXd w(out, in);
      if (W[l].size() != static_cast<std::size_t>(out)) throw ConfigError("weight shape mismatch");
      for (int r = 0; r < out; ++r) {
        const auto row = W[l][static_cast<std::size_t>(r)].get<std::vector<double>>();
        if (row.size() != static_cast<std::size_t>(in)) throw ConfigError("weight shape mismatch");
        for (int c = 0; c < in; ++c) w(r, c) = row[static_cast<std::size_t>(c)];
      }
      const auto b = B[l].get<std::vector<double>>();
      if (b.size() != static_cast<std::size_t>(out)) throw ConfigError("bias shape mismatch");
      m.weights.push_back(std::move(w));
      m.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), out));
    }
    if (!(m.w > 0.0)) throw ConfigError("w must be positive");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model file: ") + e.what());
  }
}

nlohmann::json train_log_to_json(const TrainLog& log) {
  auto cells = nlohmann::json::array();
  for (const auto& c : log.cells) {
    auto epochs = nlohmann::json::array();
    for (const auto& e : c.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_prauc", e.val_prauc}});
    }
    nlohmann::json cell = {{"learning_rate", c.learning_rate},
                           {"lambda", c.lambda},
                           {"best_val_prauc", c.best_val_prauc},
                           {"best_epoch", c.best_epoch},
                           {"aborted", c.aborted},
                           {"epochs", epochs}};
    if (!c.message.empty()) cell["message"] = c.message;
    cells.push_back(cell);
  }
  return {{"cells", cells}, {"best_cell", log.best_cell}, {"train_rows", log.train_rows}, {"val_rows", log.val_rows}};
}

}  // namespace opgran
