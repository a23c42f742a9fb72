#include "otj/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "otj/errors.hpp"

namespace otj {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

nlohmann::ordered_json episode_to_json(const EpisodeRecord& r, const LabelSet& labels) {
  auto names = [&](const std::vector<LabelIndex>& seq) {
    std::vector<std::string> out;
    out.reserve(seq.size());
    for (LabelIndex l : seq) out.push_back(labels.name(l));
    return out;
  };
  nlohmann::ordered_json j;
  j["episode"] = r.episode;
  j["example_id"] = r.example_id;
  j["predicted"] = names(r.predicted);
  j["gold"] = names(r.gold);
  auto queries = nlohmann::ordered_json::array();
  for (const auto& q : r.queries) {
    nlohmann::ordered_json qj;
    qj["position"] = q.position;
    qj["issue_time"] = q.issue_time;
    qj["arrival_time"] = q.arrival_time ? nlohmann::ordered_json(*q.arrival_time) : nullptr;
    qj["response"] = q.response ? nlohmann::ordered_json(labels.name(*q.response)) : nullptr;
    queries.push_back(std::move(qj));
  }
  j["queries"] = std::move(queries);
  j["latency"] = r.latency;
  j["expected_accuracy"] = r.expected_accuracy;
  j["query_cost"] = r.query_cost;
  j["time_cost"] = r.time_cost;
  j["utility"] = r.utility;
  j["model_version"] = r.model_version;
  j["pool_exhausted"] = r.pool_exhausted;
  return j;
}

EpisodeRecord episode_from_json(const nlohmann::json& j, const LabelSet& labels) {
  auto label = [&](const nlohmann::json& v) {
    const auto name = v.get<std::string>();
    auto idx = labels.index_of(name);
    if (!idx) throw ParseError("unknown label '" + name + "' in episode record", 0);
    return *idx;
  };
  EpisodeRecord r;
  r.episode = j.at("episode").get<std::size_t>();
  r.example_id = j.at("example_id").get<std::size_t>();
  for (const auto& v : j.at("predicted")) r.predicted.push_back(label(v));
  for (const auto& v : j.at("gold")) r.gold.push_back(label(v));
  for (const auto& qj : j.at("queries")) {
    QueryRecord q;
    q.position = qj.at("position").get<std::size_t>();
    q.issue_time = qj.at("issue_time").get<double>();
    if (!qj.at("arrival_time").is_null()) q.arrival_time = qj.at("arrival_time").get<double>();
    if (!qj.at("response").is_null()) q.response = label(qj.at("response"));
    r.queries.push_back(q);
  }
  r.latency = j.at("latency").get<double>();
  r.expected_accuracy = j.at("expected_accuracy").get<double>();
  r.query_cost = j.at("query_cost").get<double>();
  r.time_cost = j.at("time_cost").get<double>();
  r.utility = j.at("utility").get<double>();
  r.model_version = j.at("model_version").get<std::uint64_t>();
  r.pool_exhausted = j.at("pool_exhausted").get<bool>();
  return r;
}

SimulatedCrowd::SimulatedCrowd(EnvironmentModel env, std::uint64_t seed, FrozenPool* pool)
    : env_(std::move(env)), rng_(seed), pool_(pool) {
  env_.latency.validate();
  if (env_.mode == CrowdMode::Frozen && pool_ == nullptr) {
    throw std::invalid_argument("frozen crowd mode needs a pool");
  }
}

void SimulatedCrowd::begin_episode(std::size_t, std::size_t example_id, const Example& example) {
  example_id_ = example_id;
  truth_ = example.gold;
  pending_.clear();
  fallback_used_ = false;
}

void SimulatedCrowd::issue(std::size_t query_index, std::size_t position, double issue_time) {
  LabelIndex label;
  double delay;
  if (env_.mode == CrowdMode::Frozen) {
    const PoolFallback fallback{&env_.response, &env_.latency, truth_.at(position)};
    const auto draw = frozen_draw(*pool_, example_id_, position, rng_,
                                  env_.pool_fallback ? &fallback : nullptr);
    label = draw.label;
    delay = draw.delay;
    fallback_used_ = fallback_used_ || draw.fallback;
  } else {
    label = sample_response(env_.response, truth_.at(position), rng_);
    delay = sample_latency(env_.latency, rng_);
  }
  double arrival = issue_time + delay;
  if (!(arrival > issue_time)) {
    arrival = std::nextafter(issue_time, std::numeric_limits<double>::infinity());
  }
  pending_.push_back({query_index, label, arrival});
}

CrowdResponse SimulatedCrowd::next(const GameState&) {
  if (pending_.empty()) throw std::logic_error("simulated crowd has nothing in flight");
  auto it = std::min_element(pending_.begin(), pending_.end(), [](const auto& a, const auto& b) {
    return a.arrival < b.arrival || (a.arrival == b.arrival && a.query_index < b.query_index);
  });
  const CrowdResponse out{it->query_index, it->label, it->arrival};
  pending_.erase(it);
  return out;
}

EnvironmentModel make_environment(const RunConfig& config, std::size_t label_count,
                                  CrowdMode mode) {
  return EnvironmentModel{ResponseModel(config.response_accuracy, label_count), config.latency,
                          mode, config.pool_fallback};
}

StreamRunner::StreamRunner(const Dataset& dataset, const RunConfig& config, Crowd& crowd,
                           StreamObserver* observer)
    : dataset_(dataset),
      config_(config),
      crowd_(crowd),
      observer_(observer),
      model_(dataset.labels),
      policy_(make_policy(config.policy, config.planner, config.threshold)),
      env_(make_environment(config, dataset.labels.size())),
      policy_rng_(derive_seed(config.seed, 1)) {
  config_.validate();
}

std::vector<std::size_t> StreamRunner::stream_order() const {
  std::vector<std::size_t> order(dataset_.examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (config_.shuffle) {
    Rng rng(derive_seed(config_.stream_seed, 7));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

std::vector<EpisodeRecord> StreamRunner::run() {
  std::vector<EpisodeRecord> records;
  const auto order = stream_order();
  records.reserve(order.size());
  for (std::size_t e = 0; e < order.size(); ++e) {
    if (observer_ && observer_->stop_requested()) break;
    records.push_back(run_episode(e, order[e]));
  }
  return records;
}

EpisodeRecord StreamRunner::run_episode(std::size_t episode, std::size_t example_id) {
  const Example& ex = dataset_.examples.at(example_id);
  const TokenSequence& x = ex.input;
  const std::size_t n = x.size();
  const auto prior = compute_potentials(model_, x);
  const auto prior_marginals = forward_backward(prior);
  const DecisionContext ctx{prior, prior_marginals, env_, config_.utility};
  const std::size_t query_cap = config_.planner.max_queries_per_token * n;

  auto emit = [&](TrajectoryEvent e) {
    if (observer_) observer_->on_event(e);
  };

  crowd_.begin_episode(episode, example_id, ex);
  if (observer_) observer_->on_marginals(episode, prior_marginals);

  auto state = GameState::initial(n);
  for (;;) {
    if (auto t = crowd_.elapsed(); t && *t > state.now()) state = advance_clock(state, *t);
    Action action = policy_->decide(state, ctx, policy_rng_);
    if (action.is_query() && state.query_count() >= query_cap) {
      action = state.has_in_flight() ? Action::wait() : Action::finish();
    }
    if (auto t = crowd_.elapsed(); t && *t > state.now()) state = advance_clock(state, *t);
    state = apply_system_action(state, action);
    const std::size_t index = state.actions().size() - 1;

    TrajectoryEvent ev;
    ev.episode = episode;
    ev.action = action.to_string();
    ev.clock = state.now();
    ev.in_flight = state.in_flight().size();
    if (action.is_query()) {
      ev.query_index = index;
      ev.position = action.position;
    }
    emit(ev);

    if (action.is_query()) {
      crowd_.issue(index, action.position, state.now());
    } else if (action.kind == Action::Kind::Wait) {
      const auto resp = crowd_.next(state);
      state = apply_crowd_response(state, resp.query_index, resp.label, resp.arrival_time);
      TrajectoryEvent re;
      re.episode = episode;
      re.action = "response";
      re.clock = state.now();
      re.in_flight = state.in_flight().size();
      re.query_index = resp.query_index;
      re.position = state.actions()[resp.query_index].position;
      re.response = dataset_.labels.name(resp.label);
      emit(re);
      if (observer_) {
        observer_->on_marginals(
            episode, forward_backward(condition_on_responses(prior, state.received(), env_.response)));
      }
    } else {
      break;
    }
  }
  crowd_.end_episode();

  const auto received = state.received();
  const auto posterior = condition_on_responses(prior, received, env_.response);
  const auto posterior_marginals = forward_backward(posterior);
  const auto breakdown = utility(state, prior, env_.response, config_.utility);

  EpisodeRecord rec;
  rec.episode = episode;
  rec.example_id = example_id;
  rec.gold = ex.gold;
  rec.latency = state.now();
  rec.expected_accuracy = breakdown.expected_accuracy;
  rec.query_cost = breakdown.query_cost;
  rec.time_cost = breakdown.time_cost;
  rec.utility = breakdown.value;
  rec.model_version = model_.version();
  rec.pool_exhausted = crowd_.episode_used_fallback();
  for (std::size_t j = 0; j < state.actions().size(); ++j) {
    if (!state.actions()[j].is_query()) continue;
    rec.queries.push_back({state.actions()[j].position, state.issue_times()[j],
                           state.arrivals()[j], state.responses()[j]});
  }
  if (policy_->predicts_by_vote()) {
    std::vector<std::vector<LabelIndex>> votes(n);
    for (const auto& obs : received) votes[obs.position].push_back(obs.label);
    rec.predicted = nvote_aggregate(votes, dataset_.labels.size());
  } else {
    rec.predicted = viterbi_map(posterior);
  }

  if (policy_->training() == TrainingSignal::Gold) {
    adagrad_update(model_, x, one_hot(ex.gold, dataset_.labels.size()), config_.crf);
  } else if (!received.empty()) {
    adagrad_update(model_, x, posterior_marginals.node, config_.crf);
  }
  if (observer_) observer_->on_episode(rec);
  return rec;
}

std::vector<EpisodeRecord> run_stream(const Dataset& dataset, const RunConfig& config,
                                      StreamObserver* observer) {
  SimulatedCrowd crowd(make_environment(config, dataset.labels.size()),
                       derive_seed(config.seed, 2));
  StreamRunner runner(dataset, config, crowd, observer);
  return runner.run();
}

}  // namespace otj
