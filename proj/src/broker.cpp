#include "otj/broker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "otj/errors.hpp"

namespace otj {

void BrokerEvents::append(BrokerEvents other) {
  assigned.insert(assigned.end(), other.assigned.begin(), other.assigned.end());
  revoked.insert(revoked.end(), other.revoked.begin(), other.revoked.end());
}

Broker::Broker(BrokerConfig config) : config_(config) {
  if (!(config_.deadline > 0.0)) throw std::invalid_argument("broker deadline must be positive");
}

WorkerSession* Broker::longest_idle() {
  WorkerSession* best = nullptr;
  for (auto& [id, w] : workers_) {
    if (w.state != WorkerState::Idle) continue;
    if (!best || w.idle_since < best->idle_since) best = &w;
  }
  return best;
}

void Broker::release(WorkerSession& w, double now) {
  w.state = WorkerState::Idle;
  w.query.reset();
  w.idle_since = now;
}

BrokerEvents Broker::dispatch(double now) {
  BrokerEvents ev;
  while (!queue_.empty()) {
    WorkerSession* w = longest_idle();
    if (!w) break;
    const QueryId id = queue_.front();
    queue_.pop_front();
    auto& q = pending_.at(id);
    q.worker = w->id;
    q.assigned_at = now;
    w->state = WorkerState::Assigned;
    w->query = id;
    ev.assigned.push_back({w->id, id});
  }
  return ev;
}

BrokerEvents Broker::join(const std::string& worker_id, double now) {
  auto [it, fresh] = workers_.try_emplace(worker_id);
  auto& w = it->second;
  if (fresh) {
    w.id = worker_id;
    w.join_time = now;
    w.payment = config_.join_bonus;
    release(w, now);
  } else if (w.state == WorkerState::Departed) {
    release(w, now);
  }
  return dispatch(now);
}

BrokerEvents Broker::depart(const std::string& worker_id, double now) {
  auto it = workers_.find(worker_id);
  if (it == workers_.end() || it->second.state == WorkerState::Departed) return {};
  auto& w = it->second;
  if (w.query) {
    auto& q = pending_.at(*w.query);
    q.worker.reset();
    queue_.push_front(q.id);
  }
  w.state = WorkerState::Departed;
  w.query.reset();
  return dispatch(now);
}

std::pair<QueryId, BrokerEvents> Broker::submit(PendingQuery query, double now) {
  query.id = next_id_++;
  query.issue_time = now;
  query.worker.reset();
  const QueryId id = query.id;
  pending_.emplace(id, std::move(query));
  queue_.push_back(id);
  return {id, dispatch(now)};
}

std::pair<AnsweredQuery, BrokerEvents> Broker::receive_answer(QueryId query_id,
                                                              const std::string& worker_id,
                                                              LabelIndex label, double now) {
  auto wit = workers_.find(worker_id);
  if (wit == workers_.end()) throw StaleAnswer("answer from unknown worker " + worker_id);
  auto& w = wit->second;
  w.payment += config_.query_price;

  auto qit = pending_.find(query_id);
  if (qit == pending_.end() || qit->second.worker != worker_id) {
    ++stale_;
    // A timed-out worker may still be marked with this query; free it.
    if (w.query == query_id) release(w, now);
    const char* why = finished_.contains(query_id) ? "already answered or closed" : "not assigned to this worker";
    throw StaleAnswer("query " + std::to_string(query_id) + " " + why);
  }
  if (label >= qit->second.labels.size()) {
    w.payment -= config_.query_price;
    throw std::out_of_range("answer label out of range");
  }
  const PendingQuery q = std::move(qit->second);
  pending_.erase(qit);
  finished_.insert(query_id);
  ++answered_;
  ++w.completed;
  release(w, now);

  // The broker clock is the only time authority; enforce t > s.
  double arrival = now;
  if (!(arrival > q.issue_time)) arrival = std::nextafter(q.issue_time, std::numeric_limits<double>::infinity());
  AnsweredQuery out{query_id, q.episode, q.game_index, q.position, label, q.issue_time, arrival};
  return {out, dispatch(now)};
}

BrokerEvents Broker::timeout_scan(double now) {
  BrokerEvents ev;
  std::vector<QueryId> expired;
  for (auto& [id, q] : pending_) {
    if (q.worker && now - q.assigned_at > config_.deadline) expired.push_back(id);
  }
  // Oldest assignment goes back to the queue first.
  std::sort(expired.begin(), expired.end(), [&](QueryId a, QueryId b) {
    return pending_.at(a).assigned_at < pending_.at(b).assigned_at;
  });
  for (auto it = expired.rbegin(); it != expired.rend(); ++it) {
    auto& q = pending_.at(*it);
    auto& w = workers_.at(*q.worker);
    ev.revoked.push_back({w.id, q.id});
    release(w, now);
    q.worker.reset();
    ++q.retries;
    ++retries_;
    queue_.push_front(q.id);
  }
  ev.append(dispatch(now));
  return ev;
}

BrokerEvents Broker::close_episode(std::size_t episode, double now) {
  BrokerEvents ev;
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (it->second.episode != episode) {
      ++it;
      continue;
    }
    const QueryId id = it->first;
    if (it->second.worker) {
      auto& w = workers_.at(*it->second.worker);
      ev.revoked.push_back({w.id, id});
      release(w, now);
    }
    std::erase(queue_, id);
    finished_.insert(id);
    it = pending_.erase(it);
  }
  ev.append(dispatch(now));
  return ev;
}

const PendingQuery* Broker::find(QueryId id) const {
  auto it = pending_.find(id);
  return it == pending_.end() ? nullptr : &it->second;
}

const WorkerSession* Broker::worker(const std::string& id) const {
  auto it = workers_.find(id);
  return it == workers_.end() ? nullptr : &it->second;
}

BrokerStats Broker::stats() const {
  BrokerStats s;
  for (const auto& [id, w] : workers_) {
    if (w.state != WorkerState::Departed) ++s.pool_size;
    if (w.state == WorkerState::Idle) ++s.idle_workers;
    s.total_paid += w.payment;
  }
  s.queue_depth = queue_.size();
  s.pending = pending_.size();
  s.answered = answered_;
  s.stale_answers = stale_;
  s.retries = retries_;
  return s;
}

}  // namespace otj
