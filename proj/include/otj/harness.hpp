#pragma once

// The streaming on-the-job loop: one game per incoming example, the crowd
// answering queries, the model updated between episodes.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "otj/config.hpp"
#include "otj/dataset.hpp"
#include "otj/environment.hpp"
#include "otj/game.hpp"
#include "otj/policy.hpp"

namespace otj {

struct QueryRecord {
  std::size_t position = 0;
  double issue_time = 0.0;
  std::optional<double> arrival_time;
  std::optional<LabelIndex> response;

  bool operator==(const QueryRecord&) const = default;
};

struct EpisodeRecord {
  std::size_t episode = 0;
  std::size_t example_id = 0;
  std::vector<LabelIndex> predicted;
  std::vector<LabelIndex> gold;
  std::vector<QueryRecord> queries;
  /// Game clock at Return.
  double latency = 0.0;
  double expected_accuracy = 0.0;
  double query_cost = 0.0;
  double time_cost = 0.0;
  double utility = 0.0;
  /// Number of model updates applied before this episode.
  std::uint64_t model_version = 0;
  bool pool_exhausted = false;

  std::size_t query_count() const { return queries.size(); }
  bool operator==(const EpisodeRecord&) const = default;
};

nlohmann::ordered_json episode_to_json(const EpisodeRecord& record, const LabelSet& labels);
EpisodeRecord episode_from_json(const nlohmann::json& j, const LabelSet& labels);

/// Source of crowd answers for the streaming loop.
class Crowd {
 public:
  virtual ~Crowd() = default;
  virtual void begin_episode(std::size_t episode, std::size_t example_id, const Example& example) = 0;
  /// Query `query_index` (index into the game's action list) on `position`,
  /// issued at game time `issue_time`.
  virtual void issue(std::size_t query_index, std::size_t position, double issue_time) = 0;
  /// Blocks until the next in-flight query is answered.
  virtual CrowdResponse next(const GameState& state) = 0;
  virtual void end_episode() {}
  /// Elapsed game time according to an external clock (live crowds only).
  virtual std::optional<double> elapsed() const { return std::nullopt; }
  /// True when the last episode needed generative answers because the
  /// frozen pool ran out.
  virtual bool episode_used_fallback() const { return false; }
};

/// Simulated crowd. Each query draws its answer and delay when issued,
/// either from the generative model given the true label or from a frozen
/// pool; answers are delivered in arrival order.
class SimulatedCrowd final : public Crowd {
 public:
  SimulatedCrowd(EnvironmentModel env, std::uint64_t seed, FrozenPool* pool = nullptr);

  void begin_episode(std::size_t episode, std::size_t example_id, const Example& example) override;
  void issue(std::size_t query_index, std::size_t position, double issue_time) override;
  CrowdResponse next(const GameState& state) override;
  bool episode_used_fallback() const override { return fallback_used_; }

 private:
  struct InFlight {
    std::size_t query_index;
    LabelIndex label;
    double arrival;
  };
  EnvironmentModel env_;
  Rng rng_;
  FrozenPool* pool_;
  std::size_t example_id_ = 0;
  std::vector<LabelIndex> truth_;
  std::vector<InFlight> pending_;
  bool fallback_used_ = false;
};

/// Receives the loop's progress; used for logs and the live dashboard.
class StreamObserver {
 public:
  virtual ~StreamObserver() = default;
  virtual void on_event(const TrajectoryEvent&) {}
  virtual void on_marginals(std::size_t /*episode*/, const Marginals&) {}
  virtual void on_episode(const EpisodeRecord&) {}
  virtual bool stop_requested() const { return false; }
};

/// Writes each trajectory event as one JSON line.
class TrajectoryWriter final : public StreamObserver {
 public:
  explicit TrajectoryWriter(std::ostream& out) : out_(out) {}
  void on_event(const TrajectoryEvent& e) override { write_trajectory_event(out_, e); }

 private:
  std::ostream& out_;
};

class StreamRunner {
 public:
  StreamRunner(const Dataset& dataset, const RunConfig& config, Crowd& crowd,
               StreamObserver* observer = nullptr);

  /// Plays every example in stream order.
  std::vector<EpisodeRecord> run();
  EpisodeRecord run_episode(std::size_t episode, std::size_t example_id);

  /// Example ids in the order they are streamed.
  std::vector<std::size_t> stream_order() const;

  const CrfModel& model() const { return model_; }
  const Policy& policy() const { return *policy_; }

 private:
  const Dataset& dataset_;
  RunConfig config_;
  Crowd& crowd_;
  StreamObserver* observer_;
  CrfModel model_;
  std::unique_ptr<Policy> policy_;
  EnvironmentModel env_;
  Rng policy_rng_;
};

EnvironmentModel make_environment(const RunConfig& config, std::size_t label_count,
                                  CrowdMode mode = CrowdMode::Generative);

/// Generative simulation of the whole stream.
std::vector<EpisodeRecord> run_stream(const Dataset& dataset, const RunConfig& config,
                                      StreamObserver* observer = nullptr);

/// Deterministic sub-seed derivation.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace otj
