#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otj/crf.hpp"
#include "otj/harness.hpp"

namespace otj {

struct ClassScores {
  std::string label;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct CurvePoint {
  std::size_t episode_window = 0;  // 1-based index of the window
  double f1 = 0.0;
  double accuracy = 0.0;
  double qs_per_token = 0.0;
  double delay_per_token = 0.0;
};

struct MetricsSummary {
  std::vector<ClassScores> classes;  // background label excluded
  std::size_t episodes = 0;
  std::size_t tokens = 0;
  std::size_t queries = 0;
  std::size_t pool_exhausted_episodes = 0;
  double accuracy = 0.0;
  double f1 = 0.0;  // micro-averaged over non-background classes
  double macro_f1 = 0.0;
  double qs_per_token = 0.0;
  double delay_per_token = 0.0;
  double cumulative_cost = 0.0;
  double mean_utility = 0.0;
  std::vector<CurvePoint> curve;

  /// Flat (key, value) view, each metric exactly once, in a fixed order.
  std::vector<std::pair<std::string, double>> flatten() const;
};

/// Precision/recall/F1 from raw counts; 0 wherever the ratio is undefined.
ClassScores score_counts(std::string label, std::size_t tp, std::size_t fp, std::size_t fn);

/// Token-level metrics over `records`; `background` (when present in the
/// label set) is excluded from the F1 averages. The learning curve has one
/// point per `window` consecutive episodes.
MetricsSummary compute_metrics(std::span<const EpisodeRecord> records, const LabelSet& labels,
                               const std::optional<std::string>& background, std::size_t window,
                               double cost_per_query);

/// Writes episodes.jsonl, summary.txt and curve.csv into `dir`.
void export_results(std::span<const EpisodeRecord> records, const MetricsSummary& summary,
                    const LabelSet& labels, const std::filesystem::path& dir);

std::vector<EpisodeRecord> load_episodes(const std::filesystem::path& path, const LabelSet& labels);

/// Human-readable one-row-per-metric table.
std::string format_summary_table(const MetricsSummary& summary);

}  // namespace otj
