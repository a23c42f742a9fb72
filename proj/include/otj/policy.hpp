#pragma once

// Action selection: the decision-theoretic MCTS planner and the baselines
// it is compared against (n-vote majority, online learning, threshold).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "otj/crf.hpp"
#include "otj/environment.hpp"
#include "otj/game.hpp"
#include "otj/mcts.hpp"

namespace otj {

struct PolicyConfig {
  MctsConfig mcts;
  /// Hard cap on queries per episode, as a multiple of the input length.
  std::size_t max_queries_per_token = 10;
};

struct ThresholdConfig {
  double confidence_target = 0.98;
  double uncertainty_factor = 0.3;

  void validate() const;
};

/// The on-the-job game as seen by the planner: crowd answers are simulated
/// from the model's own posterior predictive.
class OnTheJobSearchModel {
 public:
  using State = GameState;
  using Action = otj::Action;

  OnTheJobSearchModel(const ChainPotentials& prior, const EnvironmentModel& env,
                      const UtilityParams& params, std::size_t max_queries);

  NodeKind kind(const GameState& s) const;
  std::vector<Action> actions(const GameState& s) const;
  GameState apply(const GameState& s, const Action& a) const { return apply_system_action(s, a); }
  GameState sample(const GameState& s, Rng& rng) const;
  double evaluate(const GameState& s) const;
  /// First-visit order: waiting on an outstanding query, then returning,
  /// then new queries. A fresh query is thus scored by the outcome of
  /// waiting for its own answer.
  int visit_priority(const Action& a) const;

 private:
  const ChainPotentials& prior_;
  const EnvironmentModel& env_;
  const UtilityParams& params_;
  std::size_t max_queries_;
};

Action mcts_decide(const GameState& state, const ChainPotentials& prior,
                   const EnvironmentModel& env, const UtilityParams& params,
                   const PolicyConfig& config, Rng& rng);

/// Smallest m with (1 - p) * factor^m <= 1 - target.
std::size_t threshold_required_queries(double max_marginal, const ThresholdConfig& config);

/// Issues every required query up front (judged on the unconditioned
/// marginals), then waits for all of them, then returns.
Action threshold_decide(const GameState& state, const Marginals& prior_marginals,
                        const ThresholdConfig& config);

Action nvote_decide(const GameState& state, std::size_t votes);

/// Per-position plurality; ties and unanswered positions go to the lowest
/// label index.
std::vector<LabelIndex> nvote_aggregate(std::span<const std::vector<LabelIndex>> votes,
                                        std::size_t label_count);

Action online_decide(const GameState& state);

enum class TrainingSignal { SoftPosterior, Gold };

struct DecisionContext {
  const ChainPotentials& prior;
  const Marginals& prior_marginals;
  const EnvironmentModel& env;
  const UtilityParams& utility;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action decide(const GameState& state, const DecisionContext& ctx, Rng& rng) = 0;
  virtual std::string name() const = 0;
  virtual TrainingSignal training() const { return TrainingSignal::SoftPosterior; }
  /// True when the prediction is the vote aggregate rather than the MAP
  /// labels of the conditioned model.
  virtual bool predicts_by_vote() const { return false; }
};

/// Parses "lense", "threshold", "online" or "nvote:<n>".
std::unique_ptr<Policy> make_policy(const std::string& spec, const PolicyConfig& config,
                                    const ThresholdConfig& threshold);

}  // namespace otj
