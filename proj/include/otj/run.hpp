#pragma once

#include <vector>

#include "otj/config.hpp"
#include "otj/dataset.hpp"
#include "otj/environment.hpp"
#include "otj/harness.hpp"
#include "otj/metrics.hpp"

namespace otj {

struct RunResult {
  std::vector<EpisodeRecord> records;
  MetricsSummary summary;
};

/// Runs the stream with a simulated crowd (frozen when `pool` is given) and
/// writes trajectory.jsonl, config.txt and the metric exports into
/// `config.output_dir`.
RunResult execute_run(const Dataset& dataset, const RunConfig& config, FrozenPool* pool = nullptr);

/// Throws PoolMismatch when the pool names an example or position the
/// dataset does not have.
void check_pool_matches(const FrozenPool& pool, const Dataset& dataset);

/// Background label for metrics, or nullopt when the label set lacks it.
std::optional<std::string> background_for(const Dataset& dataset, const RunConfig& config);

}  // namespace otj
