#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "otj/crf.hpp"
#include "otj/environment.hpp"
#include "otj/game.hpp"
#include "otj/policy.hpp"

namespace otj {

/// Everything a run needs. Populated from a flat `key = value` file and
/// overridden key by key; unknown keys are rejected with ConfigError.
struct RunConfig {
  std::string policy = "lense";
  UtilityParams utility;
  double response_accuracy = 0.7;
  LatencyModel latency;
  bool pool_fallback = false;
  AdaGradConfig crf;
  PolicyConfig planner;
  ThresholdConfig threshold;
  std::uint64_t seed = 1;
  bool shuffle = false;
  std::uint64_t stream_seed = 0;
  std::filesystem::path output_dir = "otj-out";
  std::string background_label = "NONE";
  std::size_t window = 50;
  /// Dollars paid per answered query, for the cumulative cost metric.
  double query_price = 0.01;

  void set(const std::string& key, const std::string& value);
  /// Reads `key = value` lines; `#` starts a comment.
  void apply_file(const std::filesystem::path& path);
  void validate() const;

  /// Canonical (key, value) listing of every setting, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

}  // namespace otj
