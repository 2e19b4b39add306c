#include <algorithm>
#include <vector>

#include "doctest.h"

#include "opgran/enrich_unsup.hpp"
#include "opgran/metrics.hpp"
#include "opgran/rng.hpp"

using namespace opgran;

TEST_SUITE("enrich_unsup") {

TEST_CASE("next_larger") {
  const std::vector<double> u{0.0, 0.2, 0.6, 1.0};
  CHECK(*next_larger(0.2, u) == 0.6);
  CHECK_FALSE(next_larger(1.0, u).has_value());
  CHECK(*next_larger(0.6, u) == 1.0);
  CHECK(*next_larger(0.1, u) == 0.2);
}

TEST_CASE("unique_with_bounds adds 0 and 1") {
  const std::vector<double> s{0.4, 0.2, 0.4};
  CHECK(unique_with_bounds(s) == std::vector<double>{0.0, 0.2, 0.4, 1.0});
  CHECK(unique_with_bounds(std::vector<double>{}) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("noise stays inside each score's gap") {
  const std::vector<double> s{0.2, 0.6, 0.2, 1.0, 0.0};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto e = enrich_unsupervised(s, seed);
    CHECK(e.original == s);
    CHECK(e.seed == seed);
    CHECK(e.enriched[0] >= 0.2);
    CHECK(e.enriched[0] < 0.6 - 1e-9);
    CHECK(e.enriched[1] >= 0.6);
    CHECK(e.enriched[1] < 1.0 - 1e-9);
    CHECK(e.enriched[3] == 1.0);
    CHECK(e.enriched[4] < 0.2);
  }
}

TEST_CASE("strict order preserved on every pair") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Stream rng(seed, 0, StreamDomain::subsample);
    std::vector<double> s(800);
    for (auto& v : s) v = static_cast<double>(rng.below(21)) / 20.0;
    const auto e = enrich_unsupervised(s, seed).enriched;
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(e[i] >= s[i]);
      CHECK(e[i] <= 1.0);
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (s[i] < s[j] && !(e[i] < e[j])) FAIL("order broken at ", i, ",", j);
      }
    }
  }
}

TEST_CASE("grid scores become distinct") {
  Stream rng(2, 0, StreamDomain::subsample);
  std::vector<double> s(5000);
  for (auto& v : s) v = static_cast<double>(rng.below(20)) / 20.0;  // never 1
  CHECK(cardinality(enrich_unsupervised(s, 9).enriched) == 5000);
}

TEST_CASE("deterministic and policy independent") {
  Stream rng(6, 0, StreamDomain::subsample);
  std::vector<double> s(3000);
  for (auto& v : s) v = static_cast<double>(rng.below(11)) / 10.0;
  const auto a = enrich_unsupervised(s, 12, ExecPolicy::parallel);
  const auto b = enrich_unsupervised(s, 12, ExecPolicy::serial);
  CHECK(a.enriched == b.enriched);
  CHECK(enrich_unsupervised(s, 13).enriched != a.enriched);
}

TEST_CASE("auroc tracks the tie-corrected original") {
  Stream rng(4, 0, StreamDomain::subsample);
  std::vector<int> labels(4000);
  std::vector<double> s(4000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = static_cast<double>(rng.below(10)) / 10.0;
    labels[i] = rng.uniform() < 0.2 + 0.6 * s[i] ? 1 : 0;
  }
  const double base = auroc(ScoredDataset(labels, s));
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) sum += auroc(ScoredDataset(labels, enrich_unsupervised(s, seed).enriched));
  CHECK(std::abs(sum / 5.0 - base) <= 0.01);
}

}
