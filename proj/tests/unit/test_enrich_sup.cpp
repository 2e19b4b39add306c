#include <cmath>
#include <vector>

#include "doctest.h"

#include "opgran/enrich_sup.hpp"
#include "opgran/errors.hpp"
#include "opgran/metrics.hpp"
#include "opgran/rng.hpp"

#include "../support/gradcheck.hpp"

using namespace opgran;
using namespace opgran::testing;

namespace {

EnrichmentModel zero_model(NoiseMode mode, double w) {
  auto m = init_model(Variant::one_call, mode, 1);
  for (auto& W : m.weights) W.setZero();
  for (auto& b : m.biases) b.setZero();
  m.w = w;
  return m;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// score = label +- small noise, clamped into [0, 1]
std::vector<PredictionRecord> separable(std::size_t n, std::uint64_t seed) {
  Stream rng(seed, 0, StreamDomain::subsample);
  std::vector<PredictionRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.uniform() < 0.4 ? 1 : 0;
    out[i].id = "r" + std::to_string(i);
    out[i].label = y;
    out[i].score_pos = std::clamp(0.2 + 0.6 * y + 0.1 * rng.normal(), 0.0, 1.0);
    out[i].score_neg = 1.0 - *out[i].score_pos;
  }
  return out;
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.learning_rates = {0.05};
  c.lambdas = {1e-3};
  c.max_epochs = 20;
  return c;
}

}  // namespace

TEST_SUITE("enrich_sup") {

TEST_CASE("architecture") {
  const auto one = init_model(Variant::one_call, NoiseMode::adaptive, 3);
  CHECK(one.layer_dims == std::vector<int>{2, 8, 8, 1});
  const auto feat = init_model(Variant::one_call, NoiseMode::feature, 3);
  CHECK(feat.layer_dims == std::vector<int>{3, 8, 8, 1});
  const auto two = init_model(Variant::two_call, NoiseMode::adaptive, 3);
  CHECK(two.layer_dims == std::vector<int>{4, 32, 32, 1});
  CHECK(one.w == 1.0);
  for (const auto& b : one.biases) CHECK(b.isZero());
  const double bound = std::sqrt(6.0 / (2 + 8));
  CHECK(one.weights[0].cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("forward examples") {
  const std::vector<double> x{0.7, 0.3};
  CHECK(forward(zero_model(NoiseMode::adaptive, 1.0), x, 0.0) == 0.5);
  CHECK(forward(zero_model(NoiseMode::adaptive, 2.0), x, 1.0) == doctest::Approx(sig(0.5)));
  CHECK(forward(zero_model(NoiseMode::adaptive, 2.0), x, 1.0) == doctest::Approx(0.6225).epsilon(1e-4));
  CHECK(forward(zero_model(NoiseMode::none, 1.0), x, 5.0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK_THROWS_AS(forward(zero_model(NoiseMode::none, 1.0), std::vector<double>{0.5}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(forward(zero_model(NoiseMode::input_additive, 1.0), x, 0.0), std::invalid_argument);
}

TEST_CASE("input noise only moves input_additive outputs slightly") {
  auto m = init_model(Variant::one_call, NoiseMode::input_additive, 5);
  const std::vector<double> x{0.4, 0.6}, eps0{0.0, 0.0}, eps1{1.0, -1.0};
  const double a = forward(m, x, 0.0, eps0), b = forward(m, x, 0.0, eps1);
  CHECK(a != b);
  CHECK(std::abs(a - b) < 0.01);
}

TEST_CASE("loss examples") {
  Batch b;
  b.features = Eigen::MatrixXd::Constant(1, 2, 0.5);
  b.labels = Eigen::VectorXd::Ones(1);
  b.z = Eigen::VectorXd::Zero(1);
  auto m = zero_model(NoiseMode::adaptive, 1.0);
  m.lambda = 0.01;
  CHECK(loss(m, b) == doctest::Approx(std::log(2.0) + 0.01).epsilon(1e-12));
  CHECK(loss(m, b) == doctest::Approx(0.7031).epsilon(1e-4));

  m.lambda = 0.0;
  m.biases[2](0) = -std::log(1e-12);  // p = 1 - 1e-12 up to rounding
  CHECK(loss(m, b) == doctest::Approx(0.0).epsilon(1e-9));

  m.biases[2](0) = 0.3;
  const double at1 = loss(m, b);
  m.w = 7.0;
  b.z(0) = 0.0;
  CHECK(loss(m, b) == doctest::Approx(at1));  // lambda = 0, z = 0: w does not matter

  Batch empty;
  empty.features.resize(0, 2);
  CHECK_THROWS_AS(loss(m, empty), std::invalid_argument);
}

TEST_CASE("clamped BCE saturates and has zero gradient there") {
  Batch b;
  b.features = Eigen::MatrixXd::Constant(1, 2, 0.5);
  b.labels = Eigen::VectorXd::Zero(1);
  b.z = Eigen::VectorXd::Zero(1);
  auto m = zero_model(NoiseMode::adaptive, 1.0);
  m.lambda = 0.0;
  m.biases[2](0) = 60.0;  // p ~ 1, label 0
  CHECK(loss(m, b) == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
  CHECK(gradients(m, b).biases[2](0) == 0.0);
}

TEST_CASE("gradient of the noise term in w") {
  Batch b;
  b.features = Eigen::MatrixXd::Constant(1, 2, 0.5);
  b.labels = Eigen::VectorXd::Zero(1);
  b.z = Eigen::VectorXd::Ones(1);
  auto m = zero_model(NoiseMode::adaptive, 2.0);
  m.lambda = 0.0;
  const double p = sig(0.5);
  // dL/dw = dL/dlogit * d(z/w)/dw = (p - y) * (-z / w^2)
  CHECK(gradients(m, b).w == doctest::Approx(p * -0.25).epsilon(1e-12));
}

TEST_CASE("stationary output bias on balanced all-0.5 predictions") {
  Batch b;
  b.features = Eigen::MatrixXd::Constant(4, 2, 0.5);
  b.labels = (Eigen::VectorXd(4) << 1, 0, 1, 0).finished();
  b.z = Eigen::VectorXd::Zero(4);
  auto m = zero_model(NoiseMode::adaptive, 1.0);
  m.lambda = 0.0;
  CHECK(gradients(m, b).biases[2](0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("analytic gradients match central differences") {
  const NoiseMode modes[] = {NoiseMode::adaptive, NoiseMode::none, NoiseMode::input_additive, NoiseMode::feature};
  int draws = 0;
  for (std::uint64_t d = 0; draws < 40; ++d) {
    const auto mode = modes[d % 4];
    auto [model, batch] = random_problem(5000 + d, d % 8 < 4 ? Variant::one_call : Variant::two_call, mode);
    if (detail::min_abs_preactivation(model, batch) < 1e-3) continue;
    ++draws;
    const auto r = check_gradients(model, batch);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(gradients(model, batch).loss == doctest::Approx(loss(model, batch)).epsilon(1e-12));
  }
}

TEST_CASE("training rows") {
  std::vector<PredictionRecord> recs(10);
  for (int i = 0; i < 10; ++i) {
    recs[i].id = std::to_string(i);
    recs[i].label = i % 2;
    recs[i].score_pos = 0.1 * i;
    for (int s = 0; s < 20; ++s) recs[i].samples_pos.push_back(0.05 * s);
  }
  const auto one = build_training_rows(recs, Variant::one_call);
  CHECK(one.features.rows() == 10);
  CHECK(one.features.cols() == 2);
  const auto two = build_training_rows(recs, Variant::two_call);
  CHECK(two.features.rows() == 200);
  CHECK(two.features.cols() == 4);
  CHECK(std::count(two.primary.begin(), two.primary.end(), true) == 10);
  CHECK(two.record[199] == 9);

  const auto f = record_features(recs[3], Variant::one_call);
  CHECK(f.size() == 2);
  CHECK(f[0] == doctest::Approx(0.3));
  CHECK(f[1] == doctest::Approx(0.7));
  const auto f2 = record_features(recs[3], Variant::two_call, 4);
  CHECK(f2[2] == doctest::Approx(0.2));
  CHECK(f2[3] == doctest::Approx(0.8));

  recs[0].label.reset();
  CHECK(build_training_rows(recs, Variant::one_call).features.rows() == 9);
}

TEST_CASE("training validates its input") {
  const auto recs = separable(200, 1);
  auto rows = build_training_rows(recs, Variant::one_call);
  auto cfg = quick_config(1);
  cfg.val_fraction = 1.0;
  CHECK_THROWS_AS(train(rows, cfg), ConfigError);
  cfg = quick_config(1);
  cfg.patience = 30;
  CHECK_THROWS_AS(train(rows, cfg), ConfigError);
  cfg = quick_config(1);
  cfg.variant = Variant::two_call;
  CHECK_THROWS_AS(train(rows, cfg), ConfigError);

  auto single = recs;
  for (auto& r : single) r.label = 1;
  CHECK_THROWS_AS(train(build_training_rows(single, Variant::one_call), quick_config(1)), DataError);
  CHECK_THROWS_AS(train(build_training_rows(std::span(recs).first(10), Variant::one_call), quick_config(1)),
                  DataError);
}

TEST_CASE("separable toy problem") {
  const auto recs = separable(600, 2);
  TrainConfig cfg;
  cfg.seed = 2;
  const auto res = train(build_training_rows(std::span(recs).first(400), Variant::one_call), cfg);
  const std::vector<PredictionRecord> test(recs.begin() + 400, recs.end());
  const auto out = enrich_supervised(res.model, test, 2);
  std::vector<int> labels;
  for (const auto& r : test) labels.push_back(*r.label);
  CHECK(auroc(ScoredDataset(labels, out.enriched)) >= 0.99);
  CHECK(res.log.cells.size() == 12);
  CHECK(res.log.cells[res.log.best_cell].best_val_prauc >= 0.95);
}

TEST_CASE("null signal stays near prevalence") {
  Stream rng(8, 0, StreamDomain::subsample);
  std::vector<PredictionRecord> recs(3000);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].id = "n" + std::to_string(i);
    recs[i].label = rng.uniform() < 0.3 ? 1 : 0;
    pos += *recs[i].label;
    recs[i].score_pos = static_cast<double>(rng.below(21)) / 20.0;
  }
  TrainConfig cfg;
  cfg.seed = 8;
  const auto res = train(build_training_rows(recs, Variant::one_call), cfg);
  const double prevalence = static_cast<double>(pos) / static_cast<double>(recs.size());
  CHECK(std::abs(res.log.cells[res.log.best_cell].best_val_prauc - prevalence) <= 0.05);
}

TEST_CASE("training is deterministic and policy independent") {
  const auto rows = build_training_rows(separable(300, 3), Variant::one_call);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.max_epochs = 8;
  cfg.learning_rates = {0.01, 0.1};
  cfg.lambdas = {1e-3, 1e-1};
  const auto a = train(rows, cfg);
  cfg.policy = ExecPolicy::serial;
  const auto b = train(rows, cfg);
  CHECK(a.model.w == b.model.w);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(a.model.weights[l] == b.model.weights[l]);
    CHECK(a.model.biases[l] == b.model.biases[l]);
  }
  CHECK(train_log_to_json(a.log) == train_log_to_json(b.log));
  cfg.seed = 4;
  CHECK(train(rows, cfg).model.weights[0] != a.model.weights[0]);
}

TEST_CASE("early stopping honours patience") {
  const auto rows = build_training_rows(separable(400, 5), Variant::one_call);
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.patience = 3;
  cfg.max_epochs = 40;
  const auto res = train(rows, cfg);
  for (const auto& cell : res.log.cells) {
    double best = -1.0;
    std::size_t stall = 0;
    for (const auto& e : cell.epochs) {
      if (e.val_prauc > best) {
        best = e.val_prauc;
        stall = 0;
      } else {
        ++stall;
      }
      CHECK(stall <= cfg.patience);
    }
    if (cell.epochs.size() < cfg.max_epochs) CHECK(stall == cfg.patience);
    CHECK(cell.best_val_prauc == best);
  }
}

TEST_CASE("smaller w spreads the outputs") {
  auto m = init_model(Variant::one_call, NoiseMode::adaptive, 11);
  const std::vector<double> x{0.35, 0.65};
  double prev_sd = 0.0;
  for (double w : {8.0, 4.0, 2.0, 1.0, 0.5}) {
    m.w = w;
    Stream rng(11, 0, StreamDomain::enrich_supervised);
    double s = 0.0, s2 = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const double p = forward(m, x, rng.normal());
      s += p;
      s2 += p * p;
    }
    const double sd = std::sqrt((s2 - s * s / n) / (n - 1));
    CHECK(sd > prev_sd);
    prev_sd = sd;
  }
}

TEST_CASE("applying a model") {
  auto recs = separable(100, 6);
  auto m = init_model(Variant::one_call, NoiseMode::adaptive, 6);

  const auto a = enrich_supervised(m, recs, 1);
  CHECK(cardinality(a.enriched) == recs.size());
  CHECK(enrich_supervised(m, recs, 1).enriched == a.enriched);

  // same features, different ids
  auto twins = recs;
  for (auto& r : twins) r.score_pos = 0.4, r.score_neg = 0.6;
  CHECK(cardinality(enrich_supervised(m, twins, 1).enriched) == twins.size());

  // noise suppressed: seeds differ by at most |z|/(4w)
  m.w = 1e6;
  const auto s1 = enrich_supervised(m, recs, 1).enriched, s2 = enrich_supervised(m, recs, 2).enriched;
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(std::abs(s1[i] - s2[i]) <= 10.0 / m.w);

  auto none = init_model(Variant::one_call, NoiseMode::none, 6);
  CHECK(enrich_supervised(none, recs, 1).enriched == enrich_supervised(none, recs, 99).enriched);

  // reordering records does not change a record's output
  auto rev = recs;
  std::reverse(rev.begin(), rev.end());
  const auto r = enrich_supervised(init_model(Variant::one_call, NoiseMode::adaptive, 6), rev, 1).enriched;
  CHECK(r.front() == a.enriched.back());

  auto two = init_model(Variant::two_call, NoiseMode::adaptive, 6);
  CHECK_THROWS_AS(enrich_supervised(two, recs, 1), DataError);
}

TEST_CASE("model JSON round trip") {
  auto m = init_model(Variant::two_call, NoiseMode::feature, 9);
  m.w = 0.37;
  m.lambda = 0.001;
  const auto j = model_to_json(m);
  CHECK(j["variant"] == "two_call");
  CHECK(j["noise_mode"] == "feature");
  const auto back = model_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.w == m.w);
  CHECK(back.lambda == m.lambda);
  CHECK(back.layer_dims == m.layer_dims);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(back.weights[l] == m.weights[l]);
    CHECK(back.biases[l] == m.biases[l]);
  }
  auto bad = j;
  bad["layer_dims"] = {2, 8, 1};
  CHECK_THROWS(model_from_json(bad));
}

TEST_CASE("names parse with hyphens") {
  CHECK(parse_variant("one-call") == Variant::one_call);
  CHECK(parse_variant("two_call") == Variant::two_call);
  CHECK(parse_noise_mode("input-additive") == NoiseMode::input_additive);
  CHECK_THROWS(parse_noise_mode("loud"));
}

TEST_CASE("default batch size rule") {
  CHECK(detail::effective_batch_size(0, 3000) == 64);
  CHECK(detail::effective_batch_size(0, 40) == 40);
  CHECK(detail::effective_batch_size(0, 80000) == 256);
  CHECK(detail::effective_batch_size(500, 300) == 300);
}

}
