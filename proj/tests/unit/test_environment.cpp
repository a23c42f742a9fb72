#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "otj/environment.hpp"
#include "otj/errors.hpp"
#include "support/oracles.hpp"

using namespace otj;

TEST_CASE("response model puts accuracy on the truth and spreads the rest evenly") {
  const ResponseModel rm(0.7, 4);
  CHECK(response_prob(rm, 2, 2) == doctest::Approx(0.7));
  CHECK(response_prob(rm, 0, 2) == doctest::Approx(0.1));
  double total = 0.0;
  for (LabelIndex r = 0; r < 4; ++r) total += response_prob(rm, r, 1);
  CHECK(total == doctest::Approx(1.0));
  CHECK_THROWS_AS(ResponseModel(0.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(ResponseModel(1.2, 4), std::invalid_argument);
  CHECK_THROWS_AS(ResponseModel(0.7, 1), std::invalid_argument);
}

TEST_CASE("perfect workers always answer the truth") {
  const ResponseModel rm(1.0, 3);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(sample_response(rm, 1, rng) == 1u);
}

TEST_CASE("response sampling is deterministic for a fixed seed") {
  const ResponseModel rm(0.6, 5);
  Rng a(99), b(99);
  for (int i = 0; i < 200; ++i) CHECK(sample_response(rm, 3, a) == sample_response(rm, 3, b));
}

TEST_CASE("latency samples respect the floor and the requested mean") {
  const LatencyModel lm{1.2, 0.4, 0.05};
  Rng rng(2);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double d = sample_latency(lm, rng);
    CHECK(d >= lm.floor);
    sum += d;
  }
  CHECK(sum / 20000.0 == doctest::Approx(1.2).epsilon(0.02));
  CHECK_THROWS(LatencyModel{0.0, 1.0, 0.05}.validate());
  CHECK_THROWS(LatencyModel{1.0, 0.0, 0.05}.validate());
}

TEST_CASE("conditional latency always lands after now, even deep in the tail") {
  const LatencyModel lm{1.0, 0.2, 0.05};
  Rng rng(3);
  for (double elapsed : {0.0, 0.5, 1.5, 3.0, 10.0}) {
    for (int i = 0; i < 500; ++i) {
      const double t = sample_latency_conditional(lm, 2.0, 2.0 + elapsed, rng);
      CHECK(t > 2.0 + elapsed);
      CHECK(std::isfinite(t));
    }
  }
}

TEST_CASE("conditional latency with now at the issue time matches the unconditional mean") {
  const LatencyModel lm{2.0, 0.5, 0.05};
  Rng rng(4);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) sum += sample_latency_conditional(lm, 5.0, 5.0, rng) - 5.0;
  CHECK(sum / 20000.0 == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("posterior predictive response matches enumeration") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 1 + t % 4, k = 2 + t % 2;
    CrfModel model(otj::testing::make_labels(k));
    TokenSequence x;
    for (std::size_t i = 0; i < n; ++i) x.tokens.push_back(i % 2 ? "x" : "Y");
    for (std::size_t i = 0; i < n; ++i) extract_features(x, i, model.registry(), true);
    model.sync_to_registry();
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& w : model.weights()) w = g(rng);
    const ResponseModel rm(0.65, k);
    const std::vector<Observation> obs{{0, 1}, {n - 1, 0}};
    const std::size_t q = t % n;
    const auto got = posterior_predictive_response(model, x, obs, q, rm);
    const auto want = oracle::predictive(compute_potentials(model, x), obs, q, rm);
    double total = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      CHECK(std::abs(got[r] - want[r]) < 1e-10);
      total += got[r];
    }
    CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("predictive from a one-hot marginal is the response model row") {
  const ResponseModel rm(0.7, 4);
  const std::vector<double> row{0.0, 0.0, 1.0, 0.0};
  const auto p = predictive_from_marginals(row, rm);
  CHECK(p[2] == doctest::Approx(0.7));
  CHECK(p[0] == doctest::Approx(0.1));
}

TEST_CASE("frozen pool draws without replacement then reports exhaustion") {
  FrozenPool pool;
  for (LabelIndex l = 0; l < 3; ++l) pool.add(4, 1, PoolRecord{l, 1.0 + l, "w" + std::to_string(l)});
  CHECK(pool.depth(4, 1) == 3);
  CHECK(pool.depth(0, 0) == 0);
  Rng rng(6);
  std::set<LabelIndex> seen;
  for (int i = 0; i < 3; ++i) {
    const auto d = frozen_draw(pool, 4, 1, rng);
    CHECK_FALSE(d.fallback);
    seen.insert(d.label);
  }
  CHECK(seen.size() == 3);
  CHECK(pool.remaining(4, 1) == 0);
  CHECK_THROWS_AS(frozen_draw(pool, 4, 1, rng), PoolExhausted);

  const ResponseModel rm(0.7, 3);
  const LatencyModel lm{};
  const PoolFallback fb{&rm, &lm, 2};
  const auto d = frozen_draw(pool, 4, 1, rng, &fb);
  CHECK(d.fallback);
  CHECK(d.delay > 0.0);

  pool.reset();
  CHECK(pool.remaining(4, 1) == 3);
}

TEST_CASE("pool files load, and unknown labels are a mismatch") {
  otj::testing::TempDir dir;
  const LabelSet labels({"NONE", "PER"});
  {
    std::ofstream f(dir / "pool.jsonl");
    f << R"({"example_id":0,"position":1,"label":"PER","delay_seconds":1.5,"worker_id":"a"})" << "\n\n";
    f << R"({"example_id":0,"position":1,"label":"NONE","delay_seconds":0.5})" << '\n';
  }
  const auto pool = load_frozen_pool(dir / "pool.jsonl", labels);
  CHECK(pool.depth(0, 1) == 2);

  {
    std::ofstream f(dir / "bad_label.jsonl");
    f << R"({"example_id":0,"position":0,"label":"ORG","delay_seconds":1})" << '\n';
  }
  CHECK_THROWS_AS(load_frozen_pool(dir / "bad_label.jsonl", labels), PoolMismatch);

  {
    std::ofstream f(dir / "bad_json.jsonl");
    f << "{not json\n";
  }
  CHECK_THROWS_AS(load_frozen_pool(dir / "bad_json.jsonl", labels), ParseError);

  {
    std::ofstream f(dir / "bad_delay.jsonl");
    f << R"({"example_id":0,"position":0,"label":"PER","delay_seconds":0})" << '\n';
  }
  CHECK_THROWS_AS(load_frozen_pool(dir / "bad_delay.jsonl", labels), ParseError);
}
