#pragma once

// The stochastic game between the system and the crowd on one input.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "otj/crf.hpp"
#include "otj/environment.hpp"

namespace otj {

struct Action {
  enum class Kind : std::uint8_t { Query, Wait, Return };

  Kind kind = Kind::Return;
  std::size_t position = 0;  // meaningful for Query only

  static Action query(std::size_t position) { return {Kind::Query, position}; }
  static Action wait() { return {Kind::Wait, 0}; }
  static Action finish() { return {Kind::Return, 0}; }

  bool is_query() const { return kind == Kind::Query; }

  /// Total order used for tie-breaking: Query(0) < ... < Query(n-1) < Wait < Return.
  std::size_t ordinal(std::size_t length) const {
    switch (kind) {
      case Kind::Query: return position;
      case Kind::Wait: return length;
      case Kind::Return: return length + 1;
    }
    return length + 1;
  }

  bool operator==(const Action& other) const {
    return kind == other.kind && (kind != Kind::Query || position == other.position);
  }

  std::string to_string() const;
};

enum class Turn : std::uint8_t { System, Crowd, Terminal };

/// Game state (clock, issued actions, issue times, responses, arrival
/// times). The four lists are parallel; Wait/Return entries never carry a
/// response. Transitions return new states and leave their input untouched.
class GameState {
 public:
  static GameState initial(std::size_t length);

  double now() const { return now_; }
  Turn turn() const { return turn_; }
  std::size_t length() const { return length_; }
  bool terminal() const { return turn_ == Turn::Terminal; }

  const std::vector<Action>& actions() const { return actions_; }
  const std::vector<double>& issue_times() const { return issue_times_; }
  const std::vector<std::optional<LabelIndex>>& responses() const { return responses_; }
  const std::vector<std::optional<double>>& arrivals() const { return arrivals_; }

  /// Indices of Query entries still awaiting a response.
  std::vector<std::size_t> in_flight() const;
  bool has_in_flight() const;
  std::size_t query_count() const;
  std::size_t queries_on(std::size_t position) const;
  /// Answered queries as (position, label), in issue order.
  std::vector<Observation> received() const;

  /// Checks every structural invariant; returns a description of the first
  /// violation or an empty string.
  std::string check_invariants() const;

  bool operator==(const GameState&) const = default;

 private:
  friend GameState apply_system_action(const GameState&, const Action&);
  friend GameState apply_crowd_response(const GameState&, std::size_t, LabelIndex, double);
  friend GameState advance_clock(const GameState&, double);

  double now_ = 0.0;
  Turn turn_ = Turn::System;
  std::size_t length_ = 0;
  std::vector<Action> actions_;
  std::vector<double> issue_times_;
  std::vector<std::optional<LabelIndex>> responses_;
  std::vector<std::optional<double>> arrivals_;
};

struct UtilityParams {
  double cost_per_query = 0.01;
  double cost_per_second = 0.005;

  void validate() const;
};

/// Legal system actions in ordinal order. Empty unless it is the system's turn.
std::vector<Action> legal_actions(const GameState& state);

bool is_legal(const GameState& state, const Action& action);

/// Appends the action stamped with the current clock. Throws IllegalAction.
GameState apply_system_action(const GameState& state, const Action& action);

/// Records the answer to in-flight query `query_index`, moves the clock to
/// `arrival_time` and hands the turn back to the system.
GameState apply_crowd_response(const GameState& state, std::size_t query_index, LabelIndex label,
                               double arrival_time);

/// Moves the clock forward without any game event (deliberation time on the
/// live path).
GameState advance_clock(const GameState& state, double time);

/// One crowd move: every in-flight query draws a conditional arrival time,
/// the earliest one answers. With `truth` empty the answer is drawn from the
/// posterior predictive of `prior` conditioned on the received answers;
/// otherwise it is drawn from the response model given the true label.
GameState sample_crowd_move(const GameState& state, const EnvironmentModel& env,
                            const ChainPotentials& prior, Rng& rng,
                            std::span<const LabelIndex> truth = {});

/// Mean marginal probability of the predicted label.
double expected_accuracy(const Marginals& marginals, std::span<const LabelIndex> map_labels);

struct UtilityBreakdown {
  double expected_accuracy = 0.0;
  double query_cost = 0.0;
  double time_cost = 0.0;
  double value = 0.0;
};

/// Utility of returning in `state`: expected accuracy of the MAP labels under
/// the posterior conditioned on received answers, minus query and time cost.
/// Pending queries count toward the query cost but carry no information.
UtilityBreakdown utility(const GameState& state, const ChainPotentials& prior,
                         const ResponseModel& response_model, const UtilityParams& params);

/// One line of the line-delimited trajectory log.
struct TrajectoryEvent {
  std::size_t episode = 0;
  std::string action;
  double clock = 0.0;
  std::size_t in_flight = 0;
  std::optional<std::size_t> query_index;
  std::optional<std::size_t> position;
  std::optional<std::string> response;
};

void write_trajectory_event(std::ostream& out, const TrajectoryEvent& event);

}  // namespace otj
