#pragma once

// Linear-chain CRF: sparse feature extraction, exact log-space inference,
// response conditioning and online AdaGrad training.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace otj {

using LabelIndex = std::size_t;

/// Ordered set of output labels. Index of a label is stable for the lifetime
/// of the set.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  const std::string& name(LabelIndex i) const { return labels_.at(i); }
  std::optional<LabelIndex> index_of(std::string_view name) const;
  const std::vector<std::string>& names() const { return labels_; }

  bool operator==(const LabelSet& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, LabelIndex> index_;
};

struct TokenSequence {
  std::vector<std::string> tokens;
  /// Optional precomputed dense vector per token; empty when absent.
  std::vector<std::vector<double>> dense;

  std::size_t size() const { return tokens.size(); }
};

/// Sparse (index, value) pairs sorted by index, no explicit zeros.
using FeatureVector = std::vector<std::pair<std::uint32_t, double>>;

/// Append-only map between observation-feature names and indices.
class FeatureRegistry {
 public:
  std::optional<std::uint32_t> find(std::string_view name) const;
  std::uint32_t intern(const std::string& name);
  const std::string& name(std::uint32_t index) const { return names_.at(index); }
  std::size_t size() const { return names_.size(); }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> names_;
};

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct ChainPotentials {
  Matrix node;  // n x K
  Matrix edge;  // K x K, shared by every adjacent pair

  std::size_t length() const { return node.rows(); }
  std::size_t label_count() const { return node.cols(); }
};

struct Marginals {
  Matrix node;        // n x K, rows sum to one
  Matrix transition;  // K x K, expected transition counts summed over positions
  double log_partition = 0.0;
};

/// A received crowd answer: the queried position and the label given.
struct Observation {
  std::size_t position;
  LabelIndex label;
};

class ResponseModel;

/// Weight vector layout: [K*K transitions][K label biases][F*K observation
/// features conjoined with labels]. Grows by K whenever a feature is added.
class CrfModel {
 public:
  explicit CrfModel(LabelSet labels);

  const LabelSet& labels() const { return labels_; }
  std::size_t label_count() const { return labels_.size(); }
  FeatureRegistry& registry() { return registry_; }
  const FeatureRegistry& registry() const { return registry_; }

  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& accumulators() { return accumulators_; }
  const std::vector<double>& accumulators() const { return accumulators_; }

  std::size_t transition_index(LabelIndex from, LabelIndex to) const {
    return from * label_count() + to;
  }
  std::size_t bias_index(LabelIndex label) const {
    return label_count() * label_count() + label;
  }
  std::size_t feature_index(std::uint32_t feature, LabelIndex label) const {
    return label_count() * (label_count() + 1) + std::size_t{feature} * label_count() + label;
  }

  /// Human-readable name of a weight coordinate, e.g. "word=George∧label=LOC".
  std::string weight_name(std::size_t index) const;

  /// Resizes weights and accumulators to cover every registered feature.
  void sync_to_registry();

  /// Number of completed training updates.
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }
  void set_version(std::uint64_t v) { version_ = v; }

 private:
  LabelSet labels_;
  FeatureRegistry registry_;
  std::vector<double> weights_;
  std::vector<double> accumulators_;
  std::uint64_t version_ = 0;
};

struct AdaGradConfig {
  double step_size = 0.1;
  double l2 = 1e-4;
  double epsilon = 1e-8;
};

/// Word shape: upper -> X, lower -> x, digit -> d, everything else verbatim.
std::string word_shape(std::string_view token);

FeatureVector extract_features(const TokenSequence& x, std::size_t position,
                               FeatureRegistry& registry, bool allow_new);
FeatureVector extract_features(const TokenSequence& x, std::size_t position,
                               const FeatureRegistry& registry);

ChainPotentials compute_potentials(const CrfModel& model, const TokenSequence& x);

Marginals forward_backward(const ChainPotentials& potentials);

std::vector<LabelIndex> viterbi_map(const ChainPotentials& potentials);

/// Unnormalized log score of a full label sequence.
double sequence_score(const ChainPotentials& potentials, std::span<const LabelIndex> labels);

ChainPotentials condition_on_responses(const ChainPotentials& potentials,
                                       std::span<const Observation> responses,
                                       const ResponseModel& response_model);

/// Soft-label objective: expected log-likelihood of the model under the
/// product distribution whose per-position marginals are `target`, minus
/// (l2/2)||w||^2. Training maximizes this.
double soft_label_objective(const CrfModel& model, const TokenSequence& x,
                            const Matrix& target, double l2);

/// Gradient of the negated soft-label objective (the descent direction is
/// its negative): model expectations minus target expectations plus l2*w.
std::vector<double> soft_label_loss_gradient(const CrfModel& model, const TokenSequence& x,
                                             const Matrix& target, double l2);

/// One AdaGrad step on the soft-label loss. New features in `x` are
/// registered first. Returns the applied step vector.
std::vector<double> adagrad_update(CrfModel& model, const TokenSequence& x,
                                   const Matrix& target, const AdaGradConfig& config);

/// One-hot target matrix for a gold label sequence.
Matrix one_hot(std::span<const LabelIndex> labels, std::size_t label_count);

/// JSON checkpoint tagged "otj-crf-v1". Weights round-trip bit-exactly.
void save_checkpoint(const CrfModel& model, const std::filesystem::path& path);
CrfModel load_checkpoint(const std::filesystem::path& path);

inline constexpr std::string_view kCheckpointFormat = "otj-crf-v1";

}  // namespace otj
