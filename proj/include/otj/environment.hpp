#pragma once

// Generative crowd model: response noise, response latency, the posterior
// predictive over answers, and replay of pre-collected ("frozen") answers.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otj/crf.hpp"

namespace otj {

using Rng = std::mt19937_64;

/// Worker answers are correct with probability `accuracy`; the remaining
/// mass is spread uniformly over the K-1 wrong labels.
class ResponseModel {
 public:
  ResponseModel(double accuracy, std::size_t label_count);

  double accuracy() const { return accuracy_; }
  std::size_t label_count() const { return label_count_; }

 private:
  double accuracy_;
  std::size_t label_count_;
};

/// Gaussian response delay truncated below at `floor` seconds.
struct LatencyModel {
  double mean = 1.2;
  double stddev = 0.4;
  double floor = 0.05;

  void validate() const;
};

struct CrowdResponse {
  std::size_t query_index;
  LabelIndex label;
  double arrival_time;
};

struct PoolRecord {
  LabelIndex label;
  double delay;
  std::string worker_id;
};

/// Pre-collected (label, delay) answers keyed by (example id, position),
/// drawn without replacement.
class FrozenPool {
 public:
  using Key = std::pair<std::size_t, std::size_t>;

  void add(std::size_t example_id, std::size_t position, PoolRecord record);

  /// Uniformly picks an unconsumed record and marks it consumed. Returns
  /// nullptr when every record for the key has been used.
  const PoolRecord* take(std::size_t example_id, std::size_t position, Rng& rng);

  std::size_t remaining(std::size_t example_id, std::size_t position) const;
  std::size_t depth(std::size_t example_id, std::size_t position) const;
  const std::map<Key, std::vector<PoolRecord>>& records() const { return records_; }

  /// Clears every consumed flag.
  void reset();

 private:
  std::map<Key, std::vector<PoolRecord>> records_;
  std::map<Key, std::vector<bool>> consumed_;
};

enum class CrowdMode { Generative, Frozen };

struct EnvironmentModel {
  ResponseModel response;
  LatencyModel latency;
  CrowdMode mode = CrowdMode::Generative;
  /// Fall back to generative sampling when the frozen pool runs dry.
  bool pool_fallback = false;
};

double response_prob(const ResponseModel& model, LabelIndex response, LabelIndex truth);

LabelIndex sample_response(const ResponseModel& model, LabelIndex truth, Rng& rng);

double sample_latency(const LatencyModel& model, Rng& rng);

/// Absolute arrival time s + d with d drawn from the latency model
/// conditioned on s + d > now. Always strictly greater than `now`.
double sample_latency_conditional(const LatencyModel& model, double issue_time, double now,
                                  Rng& rng);

/// p(r' | x, received, q) from already-conditioned node marginals.
std::vector<double> predictive_from_marginals(std::span<const double> marginal_row,
                                              const ResponseModel& model);

std::vector<double> posterior_predictive_response(const CrfModel& model, const TokenSequence& x,
                                                  std::span<const Observation> received,
                                                  std::size_t position,
                                                  const ResponseModel& response_model);

struct FrozenDraw {
  LabelIndex label;
  double delay;
  bool fallback = false;
};

/// Generative stand-in used when a frozen pool is exhausted.
struct PoolFallback {
  const ResponseModel* response;
  const LatencyModel* latency;
  LabelIndex truth;
};

/// Draws without replacement; throws PoolExhausted when the key is used up
/// and `fallback` is null.
FrozenDraw frozen_draw(FrozenPool& pool, std::size_t example_id, std::size_t position, Rng& rng,
                       const PoolFallback* fallback = nullptr);

/// Reads line-delimited JSON records
/// {example_id, position, label, delay_seconds, worker_id}. Labels are
/// resolved against `labels`; unknown labels raise PoolMismatch.
FrozenPool load_frozen_pool(const std::filesystem::path& path, const LabelSet& labels);

/// Samples an index from a discrete distribution.
std::size_t sample_discrete(std::span<const double> probabilities, Rng& rng);

}  // namespace otj
