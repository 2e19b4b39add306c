#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"

#include "opgran/errors.hpp"
#include "opgran/metrics.hpp"
#include "opgran/records.hpp"
#include "opgran/rng.hpp"
#include "opgran/simulator.hpp"

#include "../support/scenarios.hpp"

using namespace opgran;
using namespace opgran::testing;
using nlohmann::json;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto p = std::filesystem::temp_directory_path() / ("opgran_unit_" + name);
  std::ofstream(p) << content;
  return p;
}

PredictionRecord with_samples(std::vector<double> s) {
  PredictionRecord r;
  r.id = "x";
  r.samples_pos = std::move(s);
  return r;
}

}  // namespace

TEST_SUITE("records") {

TEST_CASE("parse a plain line") {
  const auto r = record_from_json(json::parse(R"({"id":"a","label":1,"score_pos":0.95})"));
  CHECK(r.id == "a");
  CHECK(*r.label == 1);
  CHECK(*r.score_pos == 0.95);
  CHECK_FALSE(r.flagged());
}

TEST_CASE("string numerics and label spellings") {
  const auto r = record_from_json(json::parse(R"({"id":"a","label":"1","score_pos":"0.95","samples_pos":["0.5",0.25]})"));
  CHECK(*r.score_pos == 0.95);
  CHECK(*r.label == 1);
  CHECK(r.samples_pos == std::vector<double>{0.5, 0.25});
  CHECK(*record_from_json(json::parse(R"({"id":"b","label":false})")).label == 0);
}

TEST_CASE("hard violations reject the line") {
  CHECK_THROWS_AS(record_from_json(json::parse(R"({"id":"a","score_pos":1.3})")), std::invalid_argument);
  CHECK_THROWS_AS(record_from_json(json::parse(R"({"score_pos":0.3})")), std::invalid_argument);
  CHECK_THROWS_AS(record_from_json(json::parse(R"({"id":"a","label":2})")), std::invalid_argument);
  CHECK_THROWS_AS(record_from_json(json::parse(R"({"id":"a","score_pos":"high"})")), std::invalid_argument);
  CHECK_THROWS_AS(record_from_json(json::parse(R"([1,2])")), std::invalid_argument);
}

TEST_CASE("soft problems are flagged") {
  const auto r = record_from_json(json::parse(R"({"id":"a","score_pos":0.7,"score_neg":0.5})"));
  CHECK(r.flags == std::vector<std::string>{"unnormalized_scores"});
  CHECK_FALSE(record_from_json(json::parse(R"({"id":"a","score_pos":0.7,"score_neg":0.34})")).flagged());
  CHECK(record_from_json(json::parse(R"({"id":"a"})")).flags == std::vector<std::string>{"missing_score"});
}

TEST_CASE("unknown fields survive a round trip") {
  const auto j = json::parse(R"({"id":"a","label":0,"score_pos":0.25,"model":"m1","extra":{"k":[1,2]}})");
  CHECK(record_to_json(record_from_json(j)) == j);
}

TEST_CASE("file ingestion with a bad line") {
  const auto p = temp_file("mixed.jsonl", "{\"_meta\":{\"method\":\"x\"}}\n"
                                          "{\"id\":\"a\",\"label\":1,\"score_pos\":0.9}\n"
                                          "{\"id\":\"b\",\"label\":0,\"score_pos\":1.3}\n"
                                          "\n"
                                          "{\"id\":\"c\",\"label\":0,\"score_pos\":0.2,\"score_neg\":0.2}\n");
  const auto f = load_records(p);
  CHECK(f.records.size() == 2);
  CHECK(f.report.accepted == 2);
  CHECK(f.report.rejected == 1);
  CHECK(f.report.flagged == 1);
  REQUIRE(f.report.errors.size() == 1);
  CHECK(f.report.errors[0].line == 3);
  CHECK(f.metadata["method"] == "x");
  std::filesystem::remove(p);
}

TEST_CASE("mostly bad files and missing files are fatal") {
  const auto p = temp_file("bad.jsonl", "{\"id\":\"a\",\"score_pos\":0.9}\nnot json\n{\"score_pos\":0.1}\n");
  CHECK_THROWS_AS(load_records(p), DataError);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(load_records("/nonexistent/opgran.jsonl"), DataError);
}

TEST_CASE("CSV ingestion and output") {
  const auto p = temp_file("in.csv", "id,dataset_id,label,score_pos,score_neg,samples_pos\n"
                                     "a,d1,1,0.9,0.1,0.8;0.9;1\n"
                                     "\"b,2\",d1,0,0.2,,\n");
  const auto f = load_records(p);
  REQUIRE(f.records.size() == 2);
  CHECK(f.records[0].samples_pos == std::vector<double>{0.8, 0.9, 1.0});
  CHECK(f.records[1].id == "b,2");
  CHECK_FALSE(f.records[1].score_neg.has_value());

  const auto out = std::filesystem::temp_directory_path() / "opgran_unit_out.csv";
  write_records_csv(out, f.records);
  const auto back = load_records(out);
  REQUIRE(back.records.size() == 2);
  CHECK(back.records[0].samples_pos == f.records[0].samples_pos);
  CHECK(back.records[1].id == "b,2");
  CHECK(back.records[0].dataset_id == "d1");
  std::filesystem::remove(p);
  std::filesystem::remove(out);
}

TEST_CASE("simulated records round trip field for field") {
  auto cfg = joint_scenario(1);
  cfg.n = 300;
  const auto sim = simulate(cfg);
  const auto path = std::filesystem::temp_directory_path() / "opgran_unit_rt.jsonl";
  write_records(path, sim.records, {{"seed", 1}});
  const auto back = load_records(path);
  REQUIRE(back.records.size() == sim.records.size());
  for (std::size_t i = 0; i < sim.records.size(); ++i) {
    CHECK(record_to_json(back.records[i]) == record_to_json(sim.records[i]));
    CHECK(back.records[i].samples_pos == sim.records[i].samples_pos);
  }
  CHECK(back.metadata["seed"] == 1);
  std::filesystem::remove(path);
}

TEST_CASE("sample-label") {
  std::vector<double> s14(20, 0.2);
  for (int i = 0; i < 14; ++i) s14[i] = 0.8;
  std::vector<double> n14(20, 0.8);
  for (int i = 0; i < 14; ++i) n14[i] = 0.1;
  std::vector<double> even(20, 0.9);
  for (int i = 0; i < 10; ++i) even[i] = 0.3;
  const std::vector<PredictionRecord> recs{with_samples(s14), with_samples(n14), with_samples(even)};
  const auto out = aggregate_sample_label(recs);
  CHECK(out[0] == doctest::Approx(0.7));
  CHECK(out[1] == doctest::Approx(0.3));
  CHECK(out[2] == 0.5);
  CHECK(aggregate_sample_label(std::vector{with_samples({0.5})})[0] == 0.0);  // 0.5 is not above 0.5
  CHECK_THROWS_AS(aggregate_sample_label(std::vector{with_samples({})}), DataError);
}

TEST_CASE("sample-prob") {
  const std::vector<PredictionRecord> recs{with_samples({0.9, 0.8, 1.0}), with_samples({0.4}),
                                           with_samples({0.3, 0.3, 0.3})};
  const auto out = aggregate_sample_prob(recs);
  CHECK(out[0] == doctest::Approx(0.9));
  CHECK(out[1] == 0.4);
  CHECK(out[2] == doctest::Approx(0.3));
  CHECK_THROWS_AS(aggregate_sample_prob(std::vector{with_samples({})}), DataError);
}

TEST_CASE("aggregators are permutation invariant") {
  Stream rng(3, 0, StreamDomain::subsample);
  std::vector<PredictionRecord> recs(200);
  for (auto& r : recs) {
    r.id = "p";
    for (int s = 0; s < 20; ++s) r.samples_pos.push_back(rng.uniform());
  }
  const auto prob = aggregate_sample_prob(recs), lab = aggregate_sample_label(recs);
  for (std::uint64_t k = 0; k < 5; ++k) {
    for (std::size_t i = 0; i < recs.size(); ++i) {
      std::shuffle(recs[i].samples_pos.begin(), recs[i].samples_pos.end(), Stream(k, i, StreamDomain::subsample));
    }
    CHECK(aggregate_sample_prob(recs) == prob);
    CHECK(aggregate_sample_label(recs) == lab);
  }
}

TEST_CASE("sample-prob raises cardinality on jittered simulations") {
  const auto sim = simulate(joint_scenario(6));
  CHECK(cardinality(aggregate_sample_prob(sim.records)) >= cardinality(scores_of(sim.records)));
}

TEST_CASE("mean of biased runs") {
  const std::vector<ClassScores> runs{{0.6, 0.2}, {0.6, 0.2}};
  CHECK(aggregate_mean_biased(runs).score == doctest::Approx(0.75));
  const std::vector<ClassScores> sym{{0.7, 0.3}, {0.3, 0.7}};
  CHECK(aggregate_mean_biased(sym).score == doctest::Approx(0.5));
  const std::vector<ClassScores> same{{0.45, 0.45}, {0.45, 0.45}};
  CHECK(aggregate_mean_biased(same).score == doctest::Approx(0.5));
  const std::vector<ClassScores> zero{{0.0, 0.0}};
  const auto z = aggregate_mean_biased(zero);
  CHECK(z.flagged);
  CHECK(z.score == 0.5);
}

TEST_CASE("cardinality against sample size") {
  const std::vector<double> same(100, 0.3);
  const std::vector<double> fr{0.1, 0.5, 1.0};
  for (const auto& p : cardinality_vs_samplesize(same, fr, 4, 1)) CHECK(p.mean == 1.0);

  const auto sim = simulate(joint_scenario(2));
  std::vector<double> grid;
  for (const auto& r : sim.records) grid.push_back(std::round(*r.score_pos * 20) / 20);
  const auto curve = cardinality_vs_samplesize(grid, fr, 5, 3);
  CHECK(curve[2].mean == static_cast<double>(cardinality(grid)));
  CHECK(curve[2].sd == 0.0);
  CHECK(curve[0].mean >= 0.8 * curve[2].mean);
  CHECK(curve[0].mean <= curve[1].mean);
  CHECK_THROWS_AS(cardinality_vs_samplesize(grid, std::vector<double>{0.0}, 2, 1), std::invalid_argument);
}

}
