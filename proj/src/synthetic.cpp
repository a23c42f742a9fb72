#include "otj/synthetic.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "otj/crf.hpp"
#include "otj/environment.hpp"

namespace otj {

namespace {

std::vector<std::string> make_vocabulary(std::size_t count, Rng& rng,
                                         std::unordered_set<std::string>& used) {
  std::uniform_int_distribution<int> length(4, 7);
  std::uniform_int_distribution<int> letter(0, 25);
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w(static_cast<std::size_t>(length(rng)), 'a');
    for (auto& c : w) c = static_cast<char>('a' + letter(rng));
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

std::vector<double> zipf_weights(std::size_t count) {
  std::vector<double> w(count);
  for (std::size_t r = 0; r < count; ++r) w[r] = 1.0 / static_cast<double>(r + 1);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

// Forward filtering, backward sampling.
std::vector<LabelIndex> sample_chain(const ChainPotentials& pot, Rng& rng) {
  const std::size_t n = pot.length();
  const std::size_t k = pot.label_count();
  Matrix alpha(n, k);
  for (std::size_t y = 0; y < k; ++y) alpha(0, y) = pot.node(0, y);
  std::vector<double> terms(k);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t y = 0; y < k; ++y) {
      double hi = -INFINITY;
      for (std::size_t p = 0; p < k; ++p) {
        terms[p] = alpha(i - 1, p) + pot.edge(p, y);
        hi = std::max(hi, terms[p]);
      }
      double s = 0.0;
      for (double t : terms) s += std::exp(t - hi);
      alpha(i, y) = hi + std::log(s) + pot.node(i, y);
    }
  }
  auto draw = [&](const std::vector<double>& logits) {
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(k);
    for (std::size_t y = 0; y < k; ++y) p[y] = std::exp(logits[y] - hi);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= total;
    return sample_discrete(p, rng);
  };
  std::vector<LabelIndex> y(n);
  std::vector<double> logits(k);
  for (std::size_t l = 0; l < k; ++l) logits[l] = alpha(n - 1, l);
  y[n - 1] = draw(logits);
  for (std::size_t i = n - 1; i-- > 0;) {
    for (std::size_t l = 0; l < k; ++l) logits[l] = alpha(i, l) + pot.edge(l, y[i + 1]);
    y[i] = draw(logits);
  }
  return y;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (examples == 0 || length == 0) throw std::invalid_argument("synthetic task needs examples and length");
  if (labels.size() < 2 || label_frequencies.size() != labels.size()) {
    throw std::invalid_argument("label frequencies must match a label set of size >= 2");
  }
  if (words_per_label == 0) throw std::invalid_argument("words_per_label must be positive");
  if (noise_rate < 0.0 || noise_rate > 1.0) throw std::invalid_argument("noise_rate must lie in [0,1]");
  if (noise_rate > 0.0 && noise_words == 0) throw std::invalid_argument("noise needs a noise vocabulary");
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t k = config.labels.size();

  std::unordered_set<std::string> used;
  std::vector<std::vector<std::string>> vocab(k);
  for (auto& v : vocab) v = make_vocabulary(config.words_per_label, rng, used);
  const auto noise = make_vocabulary(config.noise_words, rng, used);
  const auto word_freq = zipf_weights(config.words_per_label);
  const auto noise_freq = zipf_weights(std::max<std::size_t>(config.noise_words, 1));

  Matrix edge(k, k);
  std::normal_distribution<double> gauss(0.0, config.transition_scale);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) edge(a, b) = gauss(rng);
  }

  Dataset ds;
  ds.labels = LabelSet(config.labels);
  ds.kind = config.length == 1 ? TaskKind::Classification : TaskKind::Sequence;
  std::bernoulli_distribution is_noise(config.noise_rate);
  for (std::size_t e = 0; e < config.examples; ++e) {
    ChainPotentials pot{Matrix(config.length, k), edge};
    Example ex;
    for (std::size_t i = 0; i < config.length; ++i) {
      if (is_noise(rng)) {
        ex.input.tokens.push_back(noise[sample_discrete(noise_freq, rng)]);
      } else {
        const LabelIndex home = sample_discrete(config.label_frequencies, rng);
        ex.input.tokens.push_back(vocab[home][sample_discrete(word_freq, rng)]);
        pot.node(i, home) = config.emission_weight;
      }
    }
    ex.gold = sample_chain(pot, rng);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace otj
