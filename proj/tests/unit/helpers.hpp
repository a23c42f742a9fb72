#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "otj/crf.hpp"
#include "support/temp_dir.hpp"

namespace otj::testing {

inline ChainPotentials random_potentials(std::size_t n, std::size_t k, std::mt19937_64& rng,
                                         double scale = 1.5) {
  std::normal_distribution<double> g(0.0, scale);
  ChainPotentials p{Matrix(n, k), Matrix(k, k)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < k; ++l) p.node(i, l) = g(rng);
  }
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) p.edge(a, b) = g(rng);
  }
  return p;
}

inline LabelSet make_labels(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("L" + std::to_string(i));
  return LabelSet(names);
}

inline TokenSequence tokens(std::initializer_list<const char*> words) {
  TokenSequence x;
  for (const char* w : words) x.tokens.emplace_back(w);
  return x;
}

}  // namespace otj::testing
