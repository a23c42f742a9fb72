#pragma once

// Monte-Carlo tree search over a two-player (decision vs. chance) game with
// UCT selection at decision nodes and progressive widening at chance nodes.
// The game is supplied as a SearchModel; the on-the-job game is one model,
// small hand-built games used for verification are others.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace otj {

enum class NodeKind : std::uint8_t { Decision, Chance, Terminal };

template <class M>
concept SearchModel = requires(const M& m, const typename M::State& s,
                               const typename M::Action& a, std::mt19937_64& rng) {
  { m.kind(s) } -> std::same_as<NodeKind>;
  { m.actions(s) } -> std::same_as<std::vector<typename M::Action>>;
  { m.apply(s, a) } -> std::same_as<typename M::State>;
  { m.sample(s, rng) } -> std::same_as<typename M::State>;
  { m.evaluate(s) } -> std::convertible_to<double>;
};

/// Optional hook: a model may rank actions for their first visit. Higher
/// priority is tried first; equal priorities go highest index first.
template <class M>
concept PrioritizedSearchModel = requires(const M& m, const typename M::Action& a) {
  { m.visit_priority(a) } -> std::convertible_to<int>;
};

struct MctsConfig {
  double exploration = std::numbers::sqrt2;
  std::size_t budget = 1000;
  /// Plies below the root after which a node is scored as if the game ended.
  std::size_t max_depth = 12;
  /// When false every chance visit draws a fresh outcome.
  bool widening = true;
  /// Multiply the exploration constant by the spread of leaf values seen so
  /// far in the current tree, so `exploration` is relative to the utility scale.
  bool scale_exploration = true;
};

template <SearchModel M>
class Mcts {
 public:
  using State = typename M::State;
  using Action = typename M::Action;

  struct Node {
    State state;
    NodeKind kind = NodeKind::Terminal;
    std::size_t depth = 0;
    std::uint64_t visits = 0;
    double value_sum = 0.0;
    bool expanded = false;
    std::optional<double> leaf_value;
    /// Decision nodes: one edge per legal action, children parallel (null
    /// until first visited). Chance nodes: sampled outcomes, edges unused.
    std::vector<Action> edges;
    std::vector<std::unique_ptr<Node>> children;

    double mean() const { return visits ? value_sum / static_cast<double>(visits) : 0.0; }
    std::uint64_t child_visits(std::size_t i) const {
      return children[i] ? children[i]->visits : 0;
    }
  };

  Mcts(const M& model, MctsConfig config, std::mt19937_64& rng)
      : model_(model), config_(config), rng_(rng) {
    if (config_.budget < 1) throw std::invalid_argument("mcts budget must be at least 1");
    if (config_.exploration < 0.0) throw std::invalid_argument("mcts exploration must be >= 0");
  }

  /// Runs the configured number of rollouts from `root` and commits to the
  /// child with the highest mean value (ties to the lowest index).
  Action decide(const State& root) {
    root_ = make_node(root, 0);
    value_lo_ = std::numeric_limits<double>::infinity();
    value_hi_ = -std::numeric_limits<double>::infinity();
    if (root_->kind != NodeKind::Decision) {
      throw std::invalid_argument("mcts root must be a decision node");
    }
    for (std::size_t i = 0; i < config_.budget; ++i) monte_carlo_value(*root_);
    return root_->edges.at(best_root_child(*root_));
  }

  /// One rollout: returns the utility reached and records it along the path.
  double monte_carlo_value(Node& node) {
    ++node.visits;
    double v;
    if (node.kind == NodeKind::Terminal || node.depth >= config_.max_depth) {
      if (!node.leaf_value) {
        node.leaf_value = static_cast<double>(model_.evaluate(node.state));
        value_lo_ = std::min(value_lo_, *node.leaf_value);
        value_hi_ = std::max(value_hi_, *node.leaf_value);
      }
      v = *node.leaf_value;
    } else if (node.kind == NodeKind::Decision) {
      if (!node.expanded) {
        node.edges = model_.actions(node.state);
        node.children.resize(node.edges.size());
        node.expanded = true;
        if (node.edges.empty()) throw std::logic_error("decision node without actions");
      }
      const std::size_t pick = select_child(node, effective_exploration());
      if (!node.children[pick]) {
        node.children[pick] = make_node(model_.apply(node.state, node.edges[pick]), node.depth + 1);
      }
      v = monte_carlo_value(*node.children[pick]);
    } else {
      const double limit = std::max(1.0, std::sqrt(static_cast<double>(node.visits)));
      Node* next;
      if (config_.widening && limit <= static_cast<double>(node.children.size())) {
        std::uniform_int_distribution<std::size_t> pick(0, node.children.size() - 1);
        next = node.children[pick(rng_)].get();
      } else {
        node.children.push_back(make_node(model_.sample(node.state, rng_), node.depth + 1));
        next = node.children.back().get();
      }
      v = monte_carlo_value(*next);
    }
    node.value_sum += v;
    return v;
  }

  /// UCT choice among a decision node's children. Unvisited children are
  /// taken first, by the model's visit priority when it has one and highest
  /// index first otherwise. Ties in the UCT score go to the lowest index.
  std::size_t select_child(const Node& node, double exploration) const {
    std::optional<std::size_t> fresh;
    int fresh_priority = std::numeric_limits<int>::min();
    for (std::size_t i = node.children.size(); i-- > 0;) {
      if (node.child_visits(i) != 0) continue;
      int priority = 0;
      if constexpr (PrioritizedSearchModel<M>) priority = model_.visit_priority(node.edges[i]);
      if (!fresh || priority > fresh_priority) {
        fresh = i;
        fresh_priority = priority;
      }
    }
    if (fresh) return *fresh;
    return uct_choice(node, exploration);
  }

  /// Argmax of mean + exploration * sqrt(log N / N_child) over visited children.
  static std::size_t uct_choice(const Node& node, double exploration) {
    const double log_parent = std::log(static_cast<double>(std::max<std::uint64_t>(node.visits, 1)));
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      const auto n = static_cast<double>(node.children[i]->visits);
      const double score = node.children[i]->mean() + exploration * std::sqrt(log_parent / n);
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    return best;
  }

  static std::size_t best_root_child(const Node& root) {
    std::size_t best = 0;
    double best_mean = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < root.children.size(); ++i) {
      if (root.child_visits(i) == 0) continue;
      const double m = root.children[i]->mean();
      if (m > best_mean) {
        best_mean = m;
        best = i;
      }
    }
    return best;
  }

  const Node* root() const { return root_.get(); }

  /// Exploration constant in use for the current tree.
  double effective_exploration() const {
    if (!config_.scale_exploration) return config_.exploration;
    const double spread = value_hi_ - value_lo_;
    return config_.exploration * (spread > 0.0 ? spread : 1.0);
  }

  /// Calls f(node) for every node of the last search tree.
  template <class F>
  void visit(F&& f) const {
    if (root_) visit_node(*root_, f);
  }

 private:
  std::unique_ptr<Node> make_node(State state, std::size_t depth) const {
    auto node = std::make_unique<Node>();
    node->kind = model_.kind(state);
    node->state = std::move(state);
    node->depth = depth;
    return node;
  }

  template <class F>
  static void visit_node(const Node& node, F& f) {
    f(node);
    for (const auto& c : node.children) {
      if (c) visit_node(*c, f);
    }
  }

  const M& model_;
  MctsConfig config_;
  std::mt19937_64& rng_;
  std::unique_ptr<Node> root_;
  double value_lo_ = 0.0;
  double value_hi_ = 0.0;
};

}  // namespace otj
