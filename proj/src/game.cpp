#include "otj/game.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "otj/errors.hpp"

namespace otj {

std::string Action::to_string() const {
  switch (kind) {
    case Kind::Query: return "query(" + std::to_string(position) + ")";
    case Kind::Wait: return "wait";
    case Kind::Return: return "return";
  }
  return "return";
}

GameState GameState::initial(std::size_t length) {
  if (length == 0) throw std::invalid_argument("game input must have at least one position");
  GameState s;
  s.length_ = length;
  return s;
}

std::vector<std::size_t> GameState::in_flight() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < actions_.size(); ++j) {
    if (actions_[j].is_query() && !responses_[j]) out.push_back(j);
  }
  return out;
}

bool GameState::has_in_flight() const {
  for (std::size_t j = 0; j < actions_.size(); ++j) {
    if (actions_[j].is_query() && !responses_[j]) return true;
  }
  return false;
}

std::size_t GameState::query_count() const {
  return static_cast<std::size_t>(
      std::count_if(actions_.begin(), actions_.end(), [](const Action& a) { return a.is_query(); }));
}

std::size_t GameState::queries_on(std::size_t position) const {
  return static_cast<std::size_t>(std::count(actions_.begin(), actions_.end(),
                                             Action::query(position)));
}

std::vector<Observation> GameState::received() const {
  std::vector<Observation> out;
  for (std::size_t j = 0; j < actions_.size(); ++j) {
    if (responses_[j]) out.push_back({actions_[j].position, *responses_[j]});
  }
  return out;
}

std::string GameState::check_invariants() const {
  const std::size_t k = actions_.size();
  if (issue_times_.size() != k || responses_.size() != k || arrivals_.size() != k) {
    return "parallel lists differ in length";
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (responses_[j].has_value() != arrivals_[j].has_value()) {
      return "response/arrival presence mismatch at " + std::to_string(j);
    }
    if (!actions_[j].is_query() && responses_[j]) {
      return "non-query entry carries a response at " + std::to_string(j);
    }
    if (actions_[j].is_query() && actions_[j].position >= length_) {
      return "query position out of range at " + std::to_string(j);
    }
    if (arrivals_[j] && !(*arrivals_[j] > issue_times_[j])) {
      return "arrival not after issue at " + std::to_string(j);
    }
    if (arrivals_[j] && *arrivals_[j] > now_) return "clock behind an arrival";
    if (issue_times_[j] > now_) return "clock behind an issue time";
  }
  return {};
}

void UtilityParams::validate() const {
  if (cost_per_query < 0.0 || cost_per_second < 0.0) {
    throw std::invalid_argument("utility weights must be non-negative");
  }
}

std::vector<Action> legal_actions(const GameState& state) {
  std::vector<Action> out;
  if (state.turn() != Turn::System) return out;
  out.reserve(state.length() + 2);
  for (std::size_t i = 0; i < state.length(); ++i) out.push_back(Action::query(i));
  if (state.has_in_flight()) out.push_back(Action::wait());
  out.push_back(Action::finish());
  return out;
}

bool is_legal(const GameState& state, const Action& action) {
  if (state.turn() != Turn::System) return false;
  switch (action.kind) {
    case Action::Kind::Query: return action.position < state.length();
    case Action::Kind::Wait: return state.has_in_flight();
    case Action::Kind::Return: return true;
  }
  return false;
}

GameState apply_system_action(const GameState& state, const Action& action) {
  if (!is_legal(state, action)) {
    throw IllegalAction("illegal action " + action.to_string() + " at clock " +
                        std::to_string(state.now()));
  }
  GameState next = state;
  next.actions_.push_back(action);
  next.issue_times_.push_back(state.now_);
  next.responses_.emplace_back();
  next.arrivals_.emplace_back();
  if (action.kind == Action::Kind::Wait) next.turn_ = Turn::Crowd;
  if (action.kind == Action::Kind::Return) next.turn_ = Turn::Terminal;
  return next;
}

GameState apply_crowd_response(const GameState& state, std::size_t query_index, LabelIndex label,
                               double arrival_time) {
  if (state.terminal()) throw IllegalAction("crowd response after return");
  if (query_index >= state.actions_.size() || !state.actions_[query_index].is_query() ||
      state.responses_[query_index]) {
    throw IllegalAction("query " + std::to_string(query_index) + " is not in flight");
  }
  if (!(arrival_time > state.issue_times_[query_index]) || arrival_time < state.now_) {
    throw IllegalAction("arrival time precedes issue time or clock");
  }
  GameState next = state;
  next.responses_[query_index] = label;
  next.arrivals_[query_index] = arrival_time;
  next.now_ = arrival_time;
  next.turn_ = Turn::System;
  return next;
}

GameState advance_clock(const GameState& state, double time) {
  if (time < state.now_) throw IllegalAction("clock cannot move backwards");
  GameState next = state;
  next.now_ = time;
  return next;
}

GameState sample_crowd_move(const GameState& state, const EnvironmentModel& env,
                            const ChainPotentials& prior, Rng& rng,
                            std::span<const LabelIndex> truth) {
  if (state.turn() != Turn::Crowd) throw IllegalAction("not the crowd's turn");
  const auto pending = state.in_flight();
  if (pending.empty()) throw IllegalAction("crowd move with nothing in flight");

  std::size_t winner = pending.front();
  double earliest = std::numeric_limits<double>::infinity();
  for (std::size_t j : pending) {
    const double t = sample_latency_conditional(env.latency, state.issue_times()[j], state.now(), rng);
    if (t < earliest) {
      earliest = t;
      winner = j;
    }
  }
  const std::size_t position = state.actions()[winner].position;
  LabelIndex label;
  if (truth.empty()) {
    const auto received = state.received();
    const auto marginals = forward_backward(condition_on_responses(prior, received, env.response));
    const auto predictive = predictive_from_marginals(marginals.node.row(position), env.response);
    label = sample_discrete(predictive, rng);
  } else {
    label = sample_response(env.response, truth[position], rng);
  }
  return apply_crowd_response(state, winner, label, earliest);
}

double expected_accuracy(const Marginals& marginals, std::span<const LabelIndex> map_labels) {
  const std::size_t n = marginals.node.rows();
  if (map_labels.size() != n) throw std::invalid_argument("MAP labels do not match marginals");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += marginals.node(i, map_labels[i]);
  return total / static_cast<double>(n);
}

UtilityBreakdown utility(const GameState& state, const ChainPotentials& prior,
                         const ResponseModel& response_model, const UtilityParams& params) {
  const auto received = state.received();
  const auto posterior = condition_on_responses(prior, received, response_model);
  const auto marginals = forward_backward(posterior);
  const auto map_labels = viterbi_map(posterior);
  UtilityBreakdown u;
  u.expected_accuracy = expected_accuracy(marginals, map_labels);
  u.query_cost = static_cast<double>(state.query_count()) * params.cost_per_query;
  u.time_cost = state.now() * params.cost_per_second;
  u.value = u.expected_accuracy - u.query_cost - u.time_cost;
  return u;
}

void write_trajectory_event(std::ostream& out, const TrajectoryEvent& event) {
  nlohmann::ordered_json j;
  j["episode"] = event.episode;
  j["action"] = event.action;
  j["clock"] = event.clock;
  j["in_flight"] = event.in_flight;
  if (event.query_index) j["query_index"] = *event.query_index;
  if (event.position) j["position"] = *event.position;
  if (event.response) j["response"] = *event.response;
  out << j.dump() << '\n';
}

}  // namespace otj
