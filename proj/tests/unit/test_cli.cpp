#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "opgran/records.hpp"

#include "../support/stub_server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using opgran::testing::StubServer;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "opgran_unit_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path at(const std::string& name) { return workdir() / name; }

int run(const std::string& args) {
  const std::string cmd = std::string(OPGRAN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Simulated file on the 0.05 grid with a few samples per record.
fs::path grid_preds() {
  const auto cfg = at("sim.json");
  const auto out = at("grid.jsonl");
  if (!fs::exists(out)) {
    write(cfg, R"({"n": 5000, "seed": 3, "samples_per_record": 5,
                   "subpops": [{"weight": 1, "latent_auroc_target": 0.8,
                                "rounding": {"p_grid_005": 1, "p_grid_01": 0, "p_two_decimals": 0}}]})");
    REQUIRE(run("simulate --config " + cfg.string() + " --seed 3 --out " + out.string()) == 0);
  }
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("analyze --preds /nonexistent.jsonl") == 2);  // --out missing
  CHECK(run("--resolution -1 analyze --preds x --out y") == 2);
  write(at("bad_cfg.json"), R"({"subpops": [{"weight": 0.4}]})");
  CHECK(run("simulate --config " + at("bad_cfg.json").string() + " --out " + at("x.jsonl").string()) == 2);
  CHECK(run("--out " + at("o.json").string() + " analyze --preds /nonexistent.jsonl") == 3);
  write(at("one_class.jsonl"), "{\"id\":\"a\",\"label\":1,\"score_pos\":0.9}\n{\"id\":\"b\",\"label\":1,\"score_pos\":0.2}\n");
  CHECK(run("--out " + at("o.json").string() + " analyze --preds " + at("one_class.jsonl").string()) == 3);

  write(at("a.jsonl"), "{\"id\":\"a\",\"label\":1,\"score_pos\":0.9}\n{\"id\":\"b\",\"label\":0,\"score_pos\":0.2}\n");
  write(at("b.jsonl"), "{\"id\":\"a\",\"label\":0,\"score_pos\":0.9}\n{\"id\":\"b\",\"label\":0,\"score_pos\":0.2}\n");
  CHECK(run("--out " + at("cmp").string() + " compare " + at("a.jsonl").string() + " " + at("b.jsonl").string()) == 4);

  write(at("inst.jsonl"), "{\"id\":\"a\",\"text\":\"t\"}\n");
  CHECK(run("--out " + at("g.jsonl").string() + " gateway classify --instances " + at("inst.jsonl").string() +
            " --endpoint http://127.0.0.1:1/v1/chat/completions --max-attempts 1 --backoff 0.001") == 5);
}

TEST_CASE("simulate writes records and the latent sibling") {
  const auto p = grid_preds();
  const auto f = opgran::load_records(p);
  CHECK(f.records.size() == 5000);
  CHECK(f.metadata["seed"] == 3);
  CHECK(fs::exists(p.string() + ".latent.jsonl"));
}

TEST_CASE("analyze report and plots") {
  const auto out = at("report.json");
  REQUIRE(run("--out " + out.string() + " analyze --preds " + grid_preds().string() + " --plots " + at("plots").string()) == 0);
  const auto j = json::parse(slurp(out));
  CHECK(j["methods"][0]["cardinality"].get<int>() <= 21);
  CHECK(j["methods"][0]["auroc"].get<double>() > 0.7);
  CHECK(j["metadata"]["seed"].is_number());
  CHECK(slurp(at("plots") / "pr.svg").starts_with("<svg"));
  CHECK(fs::file_size(at("plots") / "roc.svg") > 100);

  const auto csv = at("report.csv");
  REQUIRE(run("--format csv --out " + csv.string() + " analyze --preds " + grid_preds().string()) == 0);
  CHECK(slurp(csv).starts_with("method,"));
}

TEST_CASE("reruns are byte-identical") {
  const auto a = at("u1.jsonl"), b = at("u2.jsonl");
  REQUIRE(run("--seed 5 --out " + a.string() + " enrich unsupervised --preds " + grid_preds().string()) == 0);
  REQUIRE(run("--seed 5 --out " + b.string() + " enrich unsupervised --preds " + grid_preds().string()) == 0);
  CHECK(slurp(a) == slurp(b));
  const auto r1 = at("r1.json"), r2 = at("r2.json");
  REQUIRE(run("--out " + r1.string() + " analyze --preds " + a.string()) == 0);
  REQUIRE(run("--out " + r2.string() + " analyze --preds " + a.string()) == 0);
  CHECK(slurp(r1) == slurp(r2));
}

TEST_CASE("compare shows the cardinality jump") {
  const auto enriched = at("enriched.jsonl");
  REQUIRE(run("--seed 1 --out " + enriched.string() + " enrich unsupervised --preds " + grid_preds().string()) == 0);
  auto f = opgran::load_records(enriched);
  for (auto& r : f.records) r.score_pos = r.score_enriched;
  const auto moved = at("moved.jsonl");
  opgran::write_records(moved, f.records);
  REQUIRE(run("--out " + at("cmp.json").string() + " compare " + grid_preds().string() + " " + moved.string()) == 0);
  const auto j = json::parse(slurp(at("cmp.json")));
  REQUIRE(j["rows"].size() == 2);
  const auto before = j["rows"][0]["cardinality"].get<int>(), after = j["rows"][1]["cardinality"].get<int>();
  CHECK(before <= 21);
  CHECK(after >= 100 * before);
  // Scores already at 1.0 have no larger neighbor and stay tied.
  std::size_t ones = 0;
  for (const auto& r : f.records) ones += *r.score_pos == 1.0 ? 1 : 0;
  CHECK(after == static_cast<int>(5000 - ones + (ones > 0 ? 1 : 0)));
  CHECK(slurp(at("cmp.csv")).starts_with("method,calls_per_instance"));

  const auto rep = at("enriched_report.json");
  REQUIRE(run("--out " + rep.string() + " analyze --preds " + enriched.string()) == 0);
  const auto r = json::parse(slurp(rep));
  REQUIRE(r["methods"].size() == 2);
  CHECK(r["methods"][1]["cardinality"] == after);
}

TEST_CASE("train then apply") {
  std::ostringstream lines;
  for (int i = 0; i < 400; ++i) {
    const int y = i % 2;
    lines << json{{"id", "s" + std::to_string(i)}, {"label", y}, {"score_pos", y ? 0.9 : 0.1}}.dump() << "\n";
  }
  write(at("sep.jsonl"), lines.str());
  const auto model = at("model.json");
  REQUIRE(run("--seed 2 --out " + model.string() + " enrich train --no-grid --max-epochs 40 --preds " +
              at("sep.jsonl").string() + " --log " + at("log.json").string()) == 0);
  const auto m = json::parse(slurp(model));
  CHECK(m["validation"]["prauc"].get<double>() >= 0.95);
  CHECK(fs::exists(at("log.json")));
  const auto applied = at("applied.jsonl");
  REQUIRE(run("--seed 2 --out " + applied.string() + " enrich apply --model " + model.string() + " --preds " +
              at("sep.jsonl").string()) == 0);
  const auto f = opgran::load_records(applied);
  CHECK(f.metadata["method"] == "proposed-1call");
  for (const auto& r : f.records) CHECK(r.score_enriched.has_value());
  CHECK(run("--out " + at("x.json").string() + " enrich train --variant three-call --preds " + at("sep.jsonl").string()) == 2);
}

TEST_CASE("bias") {
  const auto out = at("bias.json");
  REQUIRE(run("--out " + out.string() + " bias --preds " + grid_preds().string()) == 0);
  CHECK(json::parse(slurp(out)).is_object());
}

TEST_CASE("gateway classify against a local stub") {
  StubServer stub([](const std::string&, int) {
    return StubServer::Reply{200, opgran::testing::scores_json(0.8, 0.2)};
  });
  write(at("inst2.jsonl"), "{\"id\":\"a\",\"text\":\"t\",\"label\":1}\n{\"id\":\"b\",\"text\":\"u\",\"label\":0}\n");
  const auto out = at("gw.jsonl");
  REQUIRE(run("--out " + out.string() + " gateway classify --instances " + at("inst2.jsonl").string() + " --endpoint " +
              stub.url() + " --template baseline") == 0);
  const auto f = opgran::load_records(out);
  REQUIRE(f.records.size() == 2);
  CHECK(*f.records[0].score_pos == 0.8);
  CHECK(*f.records[1].label == 0);
  CHECK(stub.hits() == 2);
}

}
