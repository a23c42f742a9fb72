#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "otj/crf.hpp"
#include "otj/environment.hpp"
#include "otj/errors.hpp"
#include "support/oracles.hpp"

using namespace otj;
using otj::testing::make_labels;
using otj::testing::random_potentials;

TEST_CASE("label set keeps first-seen order and rejects unknown names") {
  const LabelSet labels({"NONE", "PER", "LOC"});
  CHECK(labels.size() == 3);
  CHECK(labels.index_of("LOC") == 2u);
  CHECK_FALSE(labels.index_of("ORG").has_value());
  CHECK(labels.name(1) == "PER");
}

TEST_CASE("word shape maps character classes") {
  CHECK(word_shape("George") == "Xxxxxx");
  CHECK(word_shape("A-42b") == "X-ddx");
  CHECK(word_shape("") == "");
}

TEST_CASE("feature extraction registers names once and skips unknown ones when frozen") {
  FeatureRegistry reg;
  const auto x = otj::testing::tokens({"George", "Washington"});
  const auto f0 = extract_features(x, 0, reg, true);
  const std::size_t after_first = reg.size();
  CHECK(f0.size() == 7);
  CHECK(reg.find("word=George").has_value());
  CHECK(reg.find("next_word=Washington").has_value());
  extract_features(x, 0, reg, true);
  CHECK(reg.size() == after_first);

  const auto unseen = otj::testing::tokens({"Paris"});
  const FeatureRegistry& frozen = reg;
  const auto f = extract_features(unseen, 0, frozen);
  CHECK(reg.size() == after_first);
  for (const auto& [idx, v] : f) {
    CHECK(idx < reg.size());
    CHECK(v == 1.0);
  }
  CHECK_THROWS_AS(extract_features(x, 5, reg, true), std::out_of_range);
}

TEST_CASE("feature vectors are sorted with no duplicates") {
  FeatureRegistry reg;
  const auto x = otj::testing::tokens({"aaa", "aaa", "aaa"});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto f = extract_features(x, i, reg, true);
    for (std::size_t j = 1; j < f.size(); ++j) CHECK(f[j - 1].first < f[j].first);
  }
}

TEST_CASE("forward-backward agrees with enumeration") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 1 + t % 5, k = 2 + t % 3;
    const auto p = random_potentials(n, k, rng);
    const auto fb = forward_backward(p);
    const auto ex = oracle::enumerate(p);
    CHECK(fb.log_partition == doctest::Approx(ex.log_partition).epsilon(1e-12));
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t l = 0; l < k; ++l) {
        CHECK(std::abs(fb.node(i, l) - ex.node(i, l)) < 1e-10);
        row += fb.node(i, l);
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
    double total = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        CHECK(std::abs(fb.transition(a, b) - ex.transition(a, b)) < 1e-10);
        total += fb.transition(a, b);
      }
    }
    CHECK(total == doctest::Approx(static_cast<double>(n - 1)).epsilon(1e-10));
  }
}

TEST_CASE("forward-backward stays finite under extreme potentials") {
  ChainPotentials p{Matrix(3, 2), Matrix(2, 2)};
  p.node(0, 0) = 800.0;
  p.node(1, 1) = -900.0;
  p.edge(0, 1) = 700.0;
  const auto fb = forward_backward(p);
  CHECK(std::isfinite(fb.log_partition));
  for (double v : fb.node.data()) CHECK(std::isfinite(v));
  CHECK(fb.node(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("viterbi returns the lowest-index sequence among ties") {
  ChainPotentials flat{Matrix(3, 3), Matrix(3, 3)};
  CHECK(viterbi_map(flat) == std::vector<LabelIndex>{0, 0, 0});

  std::mt19937_64 rng(12);
  for (int t = 0; t < 60; ++t) {
    const auto p = random_potentials(1 + t % 6, 2 + t % 3, rng);
    const auto map = viterbi_map(p);
    CHECK(map == oracle::enumerate(p).map);
    CHECK(sequence_score(p, map) == doctest::Approx(oracle::raw_score(p, map)));
  }
}

TEST_CASE("viterbi breaks ties toward the lowest label at each backtrack step") {
  ChainPotentials p{Matrix(2, 2), Matrix(2, 2)};
  p.edge(0, 1) = 1.0;
  p.edge(1, 0) = 1.0;
  // {0,1} and {1,0} tie; the last position settles on 0 first.
  CHECK(viterbi_map(p) == std::vector<LabelIndex>{1, 0});
}

TEST_CASE("conditioning on responses matches enumeration and is order independent") {
  std::mt19937_64 rng(13);
  const ResponseModel rm(0.7, 3);
  const auto p = random_potentials(4, 3, rng);
  const std::vector<Observation> obs{{1, 2}, {3, 0}, {1, 2}};
  const auto got = forward_backward(condition_on_responses(p, obs, rm)).node;
  const auto want = oracle::conditioned_marginals(p, obs, rm);
  for (std::size_t i = 0; i < got.data().size(); ++i) CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-10);

  const std::vector<Observation> reversed(obs.rbegin(), obs.rend());
  const auto again = forward_backward(condition_on_responses(p, reversed, rm)).node;
  for (std::size_t i = 0; i < got.data().size(); ++i) CHECK(got.data()[i] == doctest::Approx(again.data()[i]).epsilon(1e-12));
}

TEST_CASE("agreeing answers sharpen the marginal of the queried token") {
  std::mt19937_64 rng(14);
  const ResponseModel rm(0.7, 4);
  const auto p = random_potentials(3, 4, rng, 0.3);
  double prev = forward_backward(p).node(1, 2);
  std::vector<Observation> obs;
  for (int j = 0; j < 4; ++j) {
    obs.push_back({1, 2});
    const double now = forward_backward(condition_on_responses(p, obs, rm)).node(1, 2);
    CHECK(now > prev);
    prev = now;
  }
}

TEST_CASE("soft-label gradient matches central differences") {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> g(0.0, 0.5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + t % 4, k = 2 + t % 3;
    CrfModel model(make_labels(k));
    TokenSequence x;
    for (std::size_t i = 0; i < n; ++i) x.tokens.push_back(i % 2 ? "Paris" : "on");
    for (std::size_t i = 0; i < n; ++i) extract_features(x, i, model.registry(), true);
    model.sync_to_registry();
    for (auto& w : model.weights()) w = g(rng);
    Matrix target(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += (target(i, l) = std::exp(g(rng)));
      for (std::size_t l = 0; l < k; ++l) target(i, l) /= s;
    }
    const auto analytic = soft_label_loss_gradient(model, x, target, 0.02);
    CrfModel probe = model;
    const auto numeric = oracle::central_difference(
        [&](const std::vector<double>& w) {
          probe.weights() = w;
          return -soft_label_objective(probe, x, target, 0.02);
        },
        model.weights(), 1e-5);
    REQUIRE(analytic.size() == numeric.size());
    for (std::size_t i = 0; i < numeric.size(); ++i) CHECK(analytic[i] == doctest::Approx(numeric[i]).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("gradient vanishes when the target equals the model's own marginals of an edgeless chain") {
  // With a single token the product target is the exact posterior, so only
  // the l2 term remains.
  CrfModel model(make_labels(3));
  const auto x = otj::testing::tokens({"solo"});
  extract_features(x, 0, model.registry(), true);
  model.sync_to_registry();
  std::mt19937_64 rng(16);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& w : model.weights()) w = g(rng);
  const auto m = forward_backward(compute_potentials(model, x));
  const auto grad = soft_label_loss_gradient(model, x, m.node, 0.0);
  for (double v : grad) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("adagrad step moves toward the target and grows the weight vector for new features") {
  CrfModel model(make_labels(3));
  const auto x = otj::testing::tokens({"George", "visited", "Paris"});
  const std::vector<LabelIndex> gold{1, 0, 2};
  const auto target = one_hot(gold, 3);
  const std::size_t before = model.weights().size();
  const double obj0 = soft_label_objective(model, x, target, 0.0);
  const AdaGradConfig cfg{0.5, 0.0, 1e-8};
  adagrad_update(model, x, target, cfg);
  CHECK(model.weights().size() > before);
  CHECK(model.weights().size() == model.accumulators().size());
  const double obj1 = soft_label_objective(model, x, target, 0.0);
  CHECK(obj1 > obj0);
  for (int i = 0; i < 30; ++i) adagrad_update(model, x, target, cfg);
  CHECK(viterbi_map(compute_potentials(model, x)) == gold);
}

TEST_CASE("first adagrad step has magnitude step_size on every touched coordinate") {
  CrfModel model(make_labels(2));
  const auto x = otj::testing::tokens({"a"});
  const auto target = one_hot(std::vector<LabelIndex>{1}, 2);
  const auto step = adagrad_update(model, x, target, AdaGradConfig{0.1, 0.0, 0.0});
  for (double s : step) {
    if (s != 0.0) CHECK(std::abs(s) == doctest::Approx(0.1));
  }
}

TEST_CASE("one_hot rejects out-of-range labels") {
  const auto m = one_hot(std::vector<LabelIndex>{0, 2}, 3);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(1, 2) == 1.0);
  CHECK(m(1, 0) == 0.0);
  CHECK_THROWS(one_hot(std::vector<LabelIndex>{3}, 3));
}

TEST_CASE("weight names describe their coordinate") {
  CrfModel model(LabelSet({"NONE", "LOC"}));
  extract_features(otj::testing::tokens({"George"}), 0, model.registry(), true);
  model.sync_to_registry();
  CHECK(model.weight_name(model.transition_index(0, 1)) == "transition=NONE->LOC");
  CHECK(model.weight_name(model.bias_index(1)) == "bias∧label=LOC");
  const auto f = *model.registry().find("word=George");
  CHECK(model.weight_name(model.feature_index(f, 1)) == "word=George∧label=LOC");
}

TEST_CASE("checkpoints round-trip bit-exactly and reject foreign documents") {
  otj::testing::TempDir dir;
  CrfModel model(LabelSet({"NONE", "PER", "LOC"}));
  const auto x = otj::testing::tokens({"George", "in", "Paris"});
  adagrad_update(model, x, one_hot(std::vector<LabelIndex>{1, 0, 2}, 3), AdaGradConfig{});
  model.weights()[0] = 0.1 + 0.2;  // not exactly representable in short decimal
  model.bump_version();
  save_checkpoint(model, dir / "m.json");
  const auto back = load_checkpoint(dir / "m.json");
  CHECK(back.weights() == model.weights());
  CHECK(back.accumulators() == model.accumulators());
  CHECK(back.version() == model.version());
  CHECK(back.labels() == model.labels());
  CHECK(back.registry().size() == model.registry().size());

  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"format":"something-else"})";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), ParseError);
}
