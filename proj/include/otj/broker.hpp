#pragma once

// Retainer-pool query broker. Pure bookkeeping: every call takes the current
// broker time, and the caller is responsible for serialising calls and for
// delivering the resulting assignments to workers.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "otj/crf.hpp"

namespace otj {

struct BrokerConfig {
  /// Seconds a worker may hold a query before it is reassigned.
  double deadline = 30.0;
  double join_bonus = 1.00;
  double query_price = 0.01;
};

enum class WorkerState { Idle, Assigned, Departed };

struct WorkerSession {
  std::string id;
  double join_time = 0.0;
  WorkerState state = WorkerState::Idle;
  std::optional<std::uint64_t> query;
  double idle_since = 0.0;
  std::size_t completed = 0;
  double payment = 0.0;
};

using QueryId = std::uint64_t;

struct PendingQuery {
  QueryId id = 0;
  std::size_t episode = 0;
  /// Index of the query in the episode's action list.
  std::size_t game_index = 0;
  std::size_t position = 0;
  std::vector<std::string> tokens;
  std::vector<std::string> labels;
  double issue_time = 0.0;
  std::optional<std::string> worker;
  double assigned_at = 0.0;
  std::size_t retries = 0;
};

struct Assignment {
  std::string worker_id;
  QueryId query_id;
};

/// Work that was taken away from a worker (timeout or closed episode).
struct Revocation {
  std::string worker_id;
  QueryId query_id;
};

struct BrokerEvents {
  std::vector<Assignment> assigned;
  std::vector<Revocation> revoked;

  void append(BrokerEvents other);
};

struct AnsweredQuery {
  QueryId query_id;
  std::size_t episode;
  std::size_t game_index;
  std::size_t position;
  LabelIndex label;
  double issue_time;
  double arrival_time;
};

struct BrokerStats {
  std::size_t pool_size = 0;
  std::size_t idle_workers = 0;
  std::size_t queue_depth = 0;
  std::size_t pending = 0;
  std::size_t answered = 0;
  std::size_t stale_answers = 0;
  std::size_t retries = 0;
  double total_paid = 0.0;
};

class Broker {
 public:
  explicit Broker(BrokerConfig config = {});

  /// Adds (or revives) a worker; queued queries are handed out immediately.
  BrokerEvents join(const std::string& worker_id, double now);
  /// The worker leaves; its query, if any, goes back to the head of the queue.
  BrokerEvents depart(const std::string& worker_id, double now);

  /// Registers a new query (its id and issue time are assigned here) and
  /// dispatches it to the longest-idle worker, or queues it.
  std::pair<QueryId, BrokerEvents> submit(PendingQuery query, double now);

  /// Accepts an answer. Throws StaleAnswer when the query is unknown,
  /// already answered, closed, or assigned to someone else; the worker is
  /// paid either way.
  std::pair<AnsweredQuery, BrokerEvents> receive_answer(QueryId query_id, const std::string& worker_id,
                                                        LabelIndex label, double now);

  /// Reassigns queries held longer than the deadline.
  BrokerEvents timeout_scan(double now);

  /// Drops every unanswered query of `episode`; later answers are stale.
  BrokerEvents close_episode(std::size_t episode, double now);

  const PendingQuery* find(QueryId id) const;
  const WorkerSession* worker(const std::string& id) const;
  const std::map<std::string, WorkerSession>& workers() const { return workers_; }
  const std::deque<QueryId>& queue() const { return queue_; }
  BrokerStats stats() const;
  const BrokerConfig& config() const { return config_; }

 private:
  BrokerEvents dispatch(double now);
  WorkerSession* longest_idle();
  void release(WorkerSession& w, double now);

  BrokerConfig config_;
  std::map<std::string, WorkerSession> workers_;
  std::map<QueryId, PendingQuery> pending_;
  std::deque<QueryId> queue_;
  std::unordered_set<QueryId> finished_;
  QueryId next_id_ = 1;
  std::size_t answered_ = 0;
  std::size_t stale_ = 0;
  std::size_t retries_ = 0;
};

}  // namespace otj
