#include "otj/policy.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

#include "otj/errors.hpp"

namespace otj {

void ThresholdConfig::validate() const {
  if (!(confidence_target > 0.0 && confidence_target < 1.0)) {
    throw std::invalid_argument("threshold target must lie in (0, 1)");
  }
  if (!(uncertainty_factor > 0.0 && uncertainty_factor < 1.0)) {
    throw std::invalid_argument("threshold factor must lie in (0, 1)");
  }
}

OnTheJobSearchModel::OnTheJobSearchModel(const ChainPotentials& prior, const EnvironmentModel& env,
                                         const UtilityParams& params, std::size_t max_queries)
    : prior_(prior), env_(env), params_(params), max_queries_(max_queries) {}

NodeKind OnTheJobSearchModel::kind(const GameState& s) const {
  switch (s.turn()) {
    case Turn::System: return NodeKind::Decision;
    case Turn::Crowd: return NodeKind::Chance;
    case Turn::Terminal: return NodeKind::Terminal;
  }
  return NodeKind::Terminal;
}

std::vector<Action> OnTheJobSearchModel::actions(const GameState& s) const {
  auto legal = legal_actions(s);
  if (s.query_count() >= max_queries_) {
    std::erase_if(legal, [](const Action& a) { return a.is_query(); });
  }
  return legal;
}

GameState OnTheJobSearchModel::sample(const GameState& s, Rng& rng) const {
  return sample_crowd_move(s, env_, prior_, rng);
}

double OnTheJobSearchModel::evaluate(const GameState& s) const {
  return utility(s, prior_, env_.response, params_).value;
}

int OnTheJobSearchModel::visit_priority(const Action& a) const {
  switch (a.kind) {
    case Action::Kind::Wait: return 2;
    case Action::Kind::Return: return 1;
    case Action::Kind::Query: return 0;
  }
  return 0;
}

Action mcts_decide(const GameState& state, const ChainPotentials& prior,
                   const EnvironmentModel& env, const UtilityParams& params,
                   const PolicyConfig& config, Rng& rng) {
  const OnTheJobSearchModel model(prior, env, params,
                                  config.max_queries_per_token * state.length());
  Mcts<OnTheJobSearchModel> search(model, config.mcts, rng);
  return search.decide(state);
}

std::size_t threshold_required_queries(double max_marginal, const ThresholdConfig& config) {
  const double allowed = 1.0 - config.confidence_target;
  double residual = 1.0 - max_marginal;
  std::size_t m = 0;
  while (residual > allowed * (1.0 + 1e-12) && m < 1000) {
    residual *= config.uncertainty_factor;
    ++m;
  }
  return m;
}

Action threshold_decide(const GameState& state, const Marginals& prior_marginals,
                        const ThresholdConfig& config) {
  for (std::size_t i = 0; i < state.length(); ++i) {
    const auto row = prior_marginals.node.row(i);
    const double top = *std::max_element(row.begin(), row.end());
    if (state.queries_on(i) < threshold_required_queries(top, config)) return Action::query(i);
  }
  return state.has_in_flight() ? Action::wait() : Action::finish();
}

Action nvote_decide(const GameState& state, std::size_t votes) {
  if (votes < 1) throw std::invalid_argument("nvote needs at least one vote");
  for (std::size_t i = 0; i < state.length(); ++i) {
    if (state.queries_on(i) < votes) return Action::query(i);
  }
  return state.has_in_flight() ? Action::wait() : Action::finish();
}

std::vector<LabelIndex> nvote_aggregate(std::span<const std::vector<LabelIndex>> votes,
                                        std::size_t label_count) {
  std::vector<LabelIndex> out;
  out.reserve(votes.size());
  std::vector<std::size_t> counts(label_count);
  for (const auto& position_votes : votes) {
    std::fill(counts.begin(), counts.end(), 0);
    for (LabelIndex v : position_votes) ++counts.at(v);
    // max_element returns the first maximum, i.e. the lowest label index.
    out.push_back(static_cast<LabelIndex>(std::max_element(counts.begin(), counts.end()) -
                                          counts.begin()));
  }
  return out;
}

Action online_decide(const GameState&) { return Action::finish(); }

namespace {

class LensePolicy final : public Policy {
 public:
  explicit LensePolicy(PolicyConfig config) : config_(config) {}
  Action decide(const GameState& state, const DecisionContext& ctx, Rng& rng) override {
    return mcts_decide(state, ctx.prior, ctx.env, ctx.utility, config_, rng);
  }
  std::string name() const override { return "lense"; }

 private:
  PolicyConfig config_;
};

class ThresholdPolicy final : public Policy {
 public:
  explicit ThresholdPolicy(ThresholdConfig config) : config_(config) { config_.validate(); }
  Action decide(const GameState& state, const DecisionContext& ctx, Rng&) override {
    return threshold_decide(state, ctx.prior_marginals, config_);
  }
  std::string name() const override { return "threshold"; }

 private:
  ThresholdConfig config_;
};

class NVotePolicy final : public Policy {
 public:
  explicit NVotePolicy(std::size_t votes) : votes_(votes) {
    if (votes < 1) throw ConfigError("nvote needs at least one vote");
  }
  Action decide(const GameState& state, const DecisionContext&, Rng&) override {
    return nvote_decide(state, votes_);
  }
  std::string name() const override { return "nvote:" + std::to_string(votes_); }
  bool predicts_by_vote() const override { return true; }

 private:
  std::size_t votes_;
};

class OnlinePolicy final : public Policy {
 public:
  Action decide(const GameState& state, const DecisionContext&, Rng&) override {
    return online_decide(state);
  }
  std::string name() const override { return "online"; }
  TrainingSignal training() const override { return TrainingSignal::Gold; }
};

}  // namespace

std::unique_ptr<Policy> make_policy(const std::string& spec, const PolicyConfig& config,
                                    const ThresholdConfig& threshold) {
  if (spec == "lense") return std::make_unique<LensePolicy>(config);
  if (spec == "threshold") return std::make_unique<ThresholdPolicy>(threshold);
  if (spec == "online") return std::make_unique<OnlinePolicy>();
  if (spec.rfind("nvote:", 0) == 0) {
    std::size_t votes = 0;
    const char* first = spec.data() + 6;
    const char* last = spec.data() + spec.size();
    auto [ptr, ec] = std::from_chars(first, last, votes);
    if (ec != std::errc{} || ptr != last || votes < 1) {
      throw ConfigError("bad vote count in policy '" + spec + "'");
    }
    return std::make_unique<NVotePolicy>(votes);
  }
  throw ConfigError("unknown policy '" + spec + "' (expected lense, threshold, online, nvote:<n>)");
}

}  // namespace otj
