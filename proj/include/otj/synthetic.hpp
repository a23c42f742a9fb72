#pragma once

// Synthetic sequence-labelling task drawn from a planted chain CRF. Tokens
// come from per-label vocabularies (or a shared noise vocabulary); labels are
// then sampled exactly from the planted conditional given the tokens.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "otj/dataset.hpp"

namespace otj {

struct SyntheticConfig {
  std::size_t examples = 500;
  std::size_t length = 8;
  std::vector<std::string> labels{"NONE", "PER", "LOC", "ORG"};
  /// Chance that a token is drawn from each label's vocabulary; the first
  /// label is the frequent background class.
  std::vector<double> label_frequencies{0.55, 0.15, 0.15, 0.15};
  std::size_t words_per_label = 40;
  std::size_t noise_words = 40;
  double noise_rate = 0.2;
  /// Planted weight tying a vocabulary word to its home label.
  double emission_weight = 4.0;
  /// Scale of the planted transition weights.
  double transition_scale = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace otj
