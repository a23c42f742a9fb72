#include "otj/crf.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "otj/environment.hpp"
#include "otj/errors.hpp"

namespace otj {

namespace {

constexpr const char* kBoundaryBefore = "<s>";
constexpr const char* kBoundaryAfter = "</s>";

double log_sum_exp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - hi);
  return hi + std::log(sum);
}

std::vector<std::string> feature_names(const TokenSequence& x, std::size_t position) {
  const std::string& word = x.tokens.at(position);
  std::string lower = word;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::vector<std::string> names;
  names.reserve(7);
  names.push_back("word=" + word);
  names.push_back("lowercase=" + lower);
  names.push_back("prefix3=" + word.substr(0, 3));
  names.push_back("suffix3=" + (word.size() > 3 ? word.substr(word.size() - 3) : word));
  names.push_back("shape=" + word_shape(word));
  names.push_back("prev_word=" + (position == 0 ? std::string(kBoundaryBefore)
                                                 : x.tokens[position - 1]));
  names.push_back("next_word=" + (position + 1 == x.size() ? std::string(kBoundaryAfter)
                                                            : x.tokens[position + 1]));
  return names;
}

template <class Lookup>
FeatureVector extract_with(const TokenSequence& x, std::size_t position, Lookup&& lookup) {
  if (position >= x.size()) throw std::out_of_range("extract_features: position out of range");
  FeatureVector out;
  for (const auto& name : feature_names(x, position)) {
    if (auto idx = lookup(name)) out.emplace_back(*idx, 1.0);
  }
  if (!x.dense.empty()) {
    const auto& vec = x.dense.at(position);
    for (std::size_t j = 0; j < vec.size(); ++j) {
      if (vec[j] == 0.0) continue;
      if (auto idx = lookup("dense:" + std::to_string(j))) out.emplace_back(*idx, vec[j]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void check_target(const Matrix& target, std::size_t n, std::size_t k) {
  if (target.rows() != n || target.cols() != k) {
    throw std::invalid_argument("target shape does not match input");
  }
}

}  // namespace

LabelSet::LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.size() < 2) throw std::invalid_argument("a label set needs at least two labels");
  for (LabelIndex i = 0; i < labels_.size(); ++i) {
    if (!index_.emplace(labels_[i], i).second) {
      throw std::invalid_argument("duplicate label: " + labels_[i]);
    }
  }
}

std::optional<LabelIndex> LabelSet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> FeatureRegistry::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t FeatureRegistry::intern(const std::string& name) {
  auto [it, inserted] = index_.emplace(name, static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

CrfModel::CrfModel(LabelSet labels) : labels_(std::move(labels)) { sync_to_registry(); }

void CrfModel::sync_to_registry() {
  const std::size_t k = label_count();
  const std::size_t want = k * (k + 1) + registry_.size() * k;
  if (weights_.size() < want) {
    weights_.resize(want, 0.0);
    accumulators_.resize(want, 0.0);
  }
}

std::string CrfModel::weight_name(std::size_t index) const {
  const std::size_t k = label_count();
  if (index < k * k) {
    return "transition=" + labels_.name(index / k) + "->" + labels_.name(index % k);
  }
  if (index < k * (k + 1)) return "bias∧label=" + labels_.name(index - k * k);
  const std::size_t rel = index - k * (k + 1);
  return registry_.name(static_cast<std::uint32_t>(rel / k)) + "∧label=" + labels_.name(rel % k);
}

std::string word_shape(std::string_view token) {
  std::string shape(token);
  for (char& c : shape) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isupper(u)) {
      c = 'X';
    } else if (std::islower(u)) {
      c = 'x';
    } else if (std::isdigit(u)) {
      c = 'd';
    }
  }
  return shape;
}

FeatureVector extract_features(const TokenSequence& x, std::size_t position,
                               FeatureRegistry& registry, bool allow_new) {
  if (!allow_new) return extract_features(x, position, std::as_const(registry));
  return extract_with(x, position, [&](const std::string& name) -> std::optional<std::uint32_t> {
    return registry.intern(name);
  });
}

FeatureVector extract_features(const TokenSequence& x, std::size_t position,
                               const FeatureRegistry& registry) {
  return extract_with(x, position,
                      [&](const std::string& name) { return registry.find(name); });
}

ChainPotentials compute_potentials(const CrfModel& model, const TokenSequence& x) {
  const std::size_t n = x.size();
  const std::size_t k = model.label_count();
  const auto& w = model.weights();
  ChainPotentials pot{Matrix(n, k), Matrix(k, k)};
  for (LabelIndex a = 0; a < k; ++a) {
    for (LabelIndex b = 0; b < k; ++b) pot.edge(a, b) = w[model.transition_index(a, b)];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (LabelIndex y = 0; y < k; ++y) pot.node(i, y) = w[model.bias_index(y)];
    for (const auto& [f, v] : extract_features(x, i, model.registry())) {
      for (LabelIndex y = 0; y < k; ++y) pot.node(i, y) += v * w[model.feature_index(f, y)];
    }
  }
  return pot;
}

Marginals forward_backward(const ChainPotentials& potentials) {
  const std::size_t n = potentials.length();
  const std::size_t k = potentials.label_count();
  Matrix alpha(n, k);
  Matrix beta(n, k, 0.0);
  std::vector<double> scratch(k);

  for (LabelIndex y = 0; y < k; ++y) alpha(0, y) = potentials.node(0, y);
  for (std::size_t i = 1; i < n; ++i) {
    for (LabelIndex y = 0; y < k; ++y) {
      for (LabelIndex p = 0; p < k; ++p) scratch[p] = alpha(i - 1, p) + potentials.edge(p, y);
      alpha(i, y) = potentials.node(i, y) + log_sum_exp(scratch);
    }
  }
  for (std::size_t i = n - 1; i-- > 0;) {
    for (LabelIndex y = 0; y < k; ++y) {
      for (LabelIndex nx = 0; nx < k; ++nx) {
        scratch[nx] = potentials.edge(y, nx) + potentials.node(i + 1, nx) + beta(i + 1, nx);
      }
      beta(i, y) = log_sum_exp(scratch);
    }
  }

  Marginals out;
  out.log_partition = log_sum_exp(alpha.row(n - 1));
  out.node = Matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (LabelIndex y = 0; y < k; ++y) {
      out.node(i, y) = std::exp(alpha(i, y) + beta(i, y) - out.log_partition);
      total += out.node(i, y);
    }
    for (LabelIndex y = 0; y < k; ++y) out.node(i, y) /= total;
  }
  out.transition = Matrix(k, k);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (LabelIndex a = 0; a < k; ++a) {
      for (LabelIndex b = 0; b < k; ++b) {
        out.transition(a, b) += std::exp(alpha(i, a) + potentials.edge(a, b) +
                                         potentials.node(i + 1, b) + beta(i + 1, b) -
                                         out.log_partition);
      }
    }
  }
  return out;
}

std::vector<LabelIndex> viterbi_map(const ChainPotentials& potentials) {
  const std::size_t n = potentials.length();
  const std::size_t k = potentials.label_count();
  Matrix delta(n, k);
  std::vector<std::vector<LabelIndex>> back(n, std::vector<LabelIndex>(k, 0));
  for (LabelIndex y = 0; y < k; ++y) delta(0, y) = potentials.node(0, y);
  for (std::size_t i = 1; i < n; ++i) {
    for (LabelIndex y = 0; y < k; ++y) {
      LabelIndex best = 0;
      double best_score = delta(i - 1, 0) + potentials.edge(0, y);
      for (LabelIndex p = 1; p < k; ++p) {
        const double s = delta(i - 1, p) + potentials.edge(p, y);
        if (s > best_score) {
          best_score = s;
          best = p;
        }
      }
      delta(i, y) = best_score + potentials.node(i, y);
      back[i][y] = best;
    }
  }
  std::vector<LabelIndex> path(n);
  LabelIndex last = 0;
  for (LabelIndex y = 1; y < k; ++y) {
    if (delta(n - 1, y) > delta(n - 1, last)) last = y;
  }
  path[n - 1] = last;
  for (std::size_t i = n - 1; i > 0; --i) path[i - 1] = back[i][path[i]];
  return path;
}

double sequence_score(const ChainPotentials& potentials, std::span<const LabelIndex> labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s += potentials.node(i, labels[i]);
    if (i > 0) s += potentials.edge(labels[i - 1], labels[i]);
  }
  return s;
}

ChainPotentials condition_on_responses(const ChainPotentials& potentials,
                                       std::span<const Observation> responses,
                                       const ResponseModel& response_model) {
  ChainPotentials out = potentials;
  const std::size_t k = potentials.label_count();
  for (const auto& obs : responses) {
    if (obs.position >= potentials.length() || obs.label >= k) {
      throw std::out_of_range("response outside the chain");
    }
    for (LabelIndex y = 0; y < k; ++y) {
      out.node(obs.position, y) += std::log(response_prob(response_model, obs.label, y));
    }
  }
  return out;
}

double soft_label_objective(const CrfModel& model, const TokenSequence& x, const Matrix& target,
                            double l2) {
  const auto pot = compute_potentials(model, x);
  const std::size_t n = pot.length();
  const std::size_t k = pot.label_count();
  check_target(target, n, k);
  const auto fb = forward_backward(pot);
  double expected = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (LabelIndex y = 0; y < k; ++y) expected += target(i, y) * pot.node(i, y);
    if (i + 1 < n) {
      for (LabelIndex a = 0; a < k; ++a) {
        for (LabelIndex b = 0; b < k; ++b) {
          expected += target(i, a) * target(i + 1, b) * pot.edge(a, b);
        }
      }
    }
  }
  double norm2 = 0.0;
  for (double w : model.weights()) norm2 += w * w;
  return expected - fb.log_partition - 0.5 * l2 * norm2;
}

std::vector<double> soft_label_loss_gradient(const CrfModel& model, const TokenSequence& x,
                                             const Matrix& target, double l2) {
  const auto pot = compute_potentials(model, x);
  const std::size_t n = pot.length();
  const std::size_t k = pot.label_count();
  check_target(target, n, k);
  const auto fb = forward_backward(pot);

  std::vector<double> grad(model.weights().size(), 0.0);
  for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = l2 * model.weights()[j];

  for (LabelIndex a = 0; a < k; ++a) {
    for (LabelIndex b = 0; b < k; ++b) {
      double target_count = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) target_count += target(i, a) * target(i + 1, b);
      grad[model.transition_index(a, b)] += fb.transition(a, b) - target_count;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (LabelIndex y = 0; y < k; ++y) {
      grad[model.bias_index(y)] += fb.node(i, y) - target(i, y);
    }
    for (const auto& [f, v] : extract_features(x, i, model.registry())) {
      for (LabelIndex y = 0; y < k; ++y) {
        grad[model.feature_index(f, y)] += v * (fb.node(i, y) - target(i, y));
      }
    }
  }
  return grad;
}

std::vector<double> adagrad_update(CrfModel& model, const TokenSequence& x, const Matrix& target,
                                   const AdaGradConfig& config) {
  if (!(config.step_size > 0.0) || config.l2 < 0.0) {
    throw std::invalid_argument("adagrad: step_size must be positive and l2 non-negative");
  }
  for (std::size_t i = 0; i < x.size(); ++i) extract_features(x, i, model.registry(), true);
  model.sync_to_registry();

  const auto grad = soft_label_loss_gradient(model, x, target, config.l2);
  auto& w = model.weights();
  auto& acc = model.accumulators();
  std::vector<double> step(grad.size(), 0.0);
  for (std::size_t j = 0; j < grad.size(); ++j) {
    if (grad[j] == 0.0) continue;
    acc[j] += grad[j] * grad[j];
    step[j] = config.step_size * grad[j] / std::sqrt(acc[j] + config.epsilon);
    w[j] -= step[j];
  }
  model.bump_version();
  return step;
}

Matrix one_hot(std::span<const LabelIndex> labels, std::size_t label_count) {
  Matrix m(labels.size(), label_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= label_count) throw std::out_of_range("label index out of range");
    m(i, labels[i]) = 1.0;
  }
  return m;
}

void save_checkpoint(const CrfModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["labels"] = model.labels().names();
  std::vector<std::string> features;
  features.reserve(model.registry().size());
  for (std::uint32_t f = 0; f < model.registry().size(); ++f) {
    features.push_back(model.registry().name(f));
  }
  j["features"] = features;
  j["weights"] = model.weights();
  j["accumulators"] = model.accumulators();
  j["version"] = model.version();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

CrfModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what(), 0);
  }
  if (j.value("format", "") != kCheckpointFormat) {
    throw ParseError("checkpoint format tag is not " + std::string(kCheckpointFormat), 0);
  }
  CrfModel model{LabelSet(j.at("labels").get<std::vector<std::string>>())};
  for (const auto& name : j.at("features")) model.registry().intern(name.get<std::string>());
  model.sync_to_registry();
  auto weights = j.at("weights").get<std::vector<double>>();
  auto acc = j.at("accumulators").get<std::vector<double>>();
  if (weights.size() != model.weights().size() || acc.size() != weights.size()) {
    throw ParseError("checkpoint weight vector does not match its registry", 0);
  }
  model.weights() = std::move(weights);
  model.accumulators() = std::move(acc);
  model.set_version(j.value("version", std::uint64_t{0}));
  return model;
}

}  // namespace otj
