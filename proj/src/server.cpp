#include "otj/server.hpp"

#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "otj/errors.hpp"
#include "otj/harness.hpp"
#include "otj/messages.hpp"
#include "otj/metrics.hpp"
#include "otj/run.hpp"

namespace otj {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

std::string to_string(StreamState s) {
  switch (s) {
    case StreamState::Idle: return "idle";
    case StreamState::Running: return "running";
    case StreamState::Stopping: return "stopping";
    case StreamState::Stopped: return "stopped";
    case StreamState::Finished: return "finished";
    case StreamState::Failed: return "failed";
  }
  return "unknown";
}

namespace {

class WsSession;

/// Anything holding a socket that shutdown must be able to tear down.
struct Connection {
  virtual ~Connection() = default;
  virtual void force_close() = 0;
};

struct MarginalsView {
  std::vector<std::string> tokens;
  Matrix node;
  std::size_t received = 0;
};

std::pair<std::string, std::map<std::string, std::string>> split_target(beast::string_view beast_target) {
  const std::string target(beast_target.data(), beast_target.size());
  std::map<std::string, std::string> query;
  const auto q = target.find('?');
  if (q == std::string::npos) return {target, query};
  std::istringstream rest(target.substr(q + 1));
  for (std::string part; std::getline(rest, part, '&');) {
    const auto eq = part.find('=');
    if (eq != std::string::npos) query[part.substr(0, eq)] = part.substr(eq + 1);
  }
  return {target.substr(0, q), query};
}

}  // namespace

struct ServerCore : std::enable_shared_from_this<ServerCore> {
  class Crowd;

  ServerCore(Dataset d, RunConfig c, ServerConfig s)
      : dataset(std::move(d)), config(std::move(c)), server(std::move(s)), broker(server.broker) {}

  Dataset dataset;
  RunConfig config;
  ServerConfig server;

  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  asio::steady_timer scan_timer{ioc};
  std::thread io_thread;
  const std::chrono::steady_clock::time_point epoch = std::chrono::steady_clock::now();
  std::uint16_t bound_port = 0;
  bool shut_down = false;

  // I/O-thread state.
  Broker broker;
  std::map<std::string, std::weak_ptr<WsSession>> sessions;
  std::vector<std::weak_ptr<Connection>> connections;
  std::uint64_t anonymous_workers = 0;

  // Stream state, shared with the stream thread.
  std::thread stream_thread;
  mutable std::mutex mu;
  StreamState state = StreamState::Idle;
  std::string failure;
  std::vector<EpisodeRecord> records;
  std::map<std::size_t, MarginalsView> marginals;
  std::optional<std::size_t> current_episode;
  std::shared_ptr<Crowd> crowd;
  std::atomic<bool> stop_flag{false};

  void track(std::weak_ptr<Connection> c) {
    std::erase_if(connections, [](const auto& w) { return w.expired(); });
    connections.push_back(std::move(c));
  }

  double now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch).count();
  }

  void deliver(const BrokerEvents& ev);
  void accept();
  void schedule_scan();
  bool start_stream();
  void stop_stream();
  void run_stream();
  json status_json() const;
  json metrics_json() const;
  std::optional<json> marginals_json(std::size_t episode) const;
  bool authorized(const http::request<http::string_body>& req) const;
  http::response<http::string_body> handle_http(const http::request<http::string_body>& req);
  void on_answer(const AnsweredQuery& a);
};

// ------------------------------------------------------------------ live crowd

class ServerCore::Crowd final : public otj::Crowd {
 public:
  explicit Crowd(std::shared_ptr<ServerCore> impl) : impl_(std::move(impl)) {}

  void begin_episode(std::size_t episode, std::size_t, const Example& example) override {
    std::lock_guard lk(mu_);
    episode_ = episode;
    tokens_ = example.input.tokens;
    answers_.clear();
    start_ = impl_->now();
  }

  void issue(std::size_t query_index, std::size_t position, double) override {
    PendingQuery q;
    {
      std::lock_guard lk(mu_);
      q.episode = episode_;
      q.tokens = tokens_;
    }
    q.game_index = query_index;
    q.position = position;
    q.labels = impl_->dataset.labels.names();
    asio::post(impl_->ioc, [impl = impl_, q = std::move(q)]() mutable {
      auto [id, ev] = impl->broker.submit(std::move(q), impl->now());
      impl->deliver(ev);
    });
  }

  CrowdResponse next(const GameState& state) override {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !answers_.empty() || stopped_; });
    if (stopped_) throw StreamStopped("stream stopped while waiting for the crowd");
    const AnsweredQuery a = answers_.front();
    answers_.pop_front();
    const double issue = state.issue_times().at(a.game_index);
    // Answers that landed while the planner was deliberating are observed now.
    double arrival = std::max(a.arrival_time - start_, state.now());
    if (!(arrival > issue)) arrival = std::nextafter(issue, std::numeric_limits<double>::infinity());
    return {a.game_index, a.label, arrival};
  }

  void end_episode() override {
    std::size_t ep;
    {
      std::lock_guard lk(mu_);
      ep = episode_;
    }
    asio::post(impl_->ioc, [impl = impl_, ep] { impl->deliver(impl->broker.close_episode(ep, impl->now())); });
  }

  std::optional<double> elapsed() const override {
    std::lock_guard lk(mu_);
    return impl_->now() - start_;
  }

  void deliver_answer(const AnsweredQuery& a) {
    std::lock_guard lk(mu_);
    if (a.episode != episode_) return;
    answers_.push_back(a);
    cv_.notify_all();
  }

  void stop() {
    std::lock_guard lk(mu_);
    stopped_ = true;
    cv_.notify_all();
  }

  std::size_t episode() const {
    std::lock_guard lk(mu_);
    return episode_;
  }

 private:
  std::shared_ptr<ServerCore> impl_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t episode_ = 0;
  std::vector<std::string> tokens_;
  std::deque<AnsweredQuery> answers_;
  double start_ = 0.0;
  bool stopped_ = false;
};

// ------------------------------------------------------------------ websocket

namespace {

class WsSession : public std::enable_shared_from_this<WsSession>, public Connection {
 public:

  WsSession(tcp::socket socket, std::shared_ptr<ServerCore> impl)
      : ws_(std::move(socket)), impl_(std::move(impl)) {}

  void force_close() override {
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

  void run(http::request<http::string_body> req) {
    impl_->track(shared_from_this());
    const auto [path, query] = split_target(req.target());
    reject_reason_.clear();
    if (auto it = query.find("token"); it != query.end() && it->second != impl_->server.token) {
      reject_reason_ = "invalid token";
    }
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      if (!self->reject_reason_.empty()) {
        self->refuse(self->reject_reason_);
        return;
      }
      self->read();
    });
  }

  void send(std::string text) {
    if (closing_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write_next();
  }

  const std::string& worker_id() const { return worker_id_; }

  /// Sends an error frame, then closes with a policy-violation reason.
  void refuse(const std::string& reason) {
    send(error_message(reason));
    close_after_flush_ = websocket::close_reason(websocket::close_code::policy_error, reason);
    if (outbox_.empty()) close_now();
  }

  void close(const std::string& reason) {
    close_after_flush_ = websocket::close_reason(websocket::close_code::going_away, reason);
    if (outbox_.empty()) close_now();
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->on_gone();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->on_message(text);
      if (!self->closing_) self->read();
    });
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(asio::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->outbox_.clear();
        self->on_gone();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) {
        self->write_next();
      } else if (self->close_after_flush_) {
        self->close_now();
      }
    });
  }

  void close_now() {
    if (closing_) return;
    closing_ = true;
    const auto reason = close_after_flush_.value_or(websocket::close_reason(websocket::close_code::normal));
    ws_.async_close(reason, [self = shared_from_this()](beast::error_code) { self->on_gone(); });
  }

  void on_message(const std::string& text) {
    ClientMessage msg;
    try {
      msg = parse_client_message(text);
    } catch (const ProtocolError& e) {
      send(error_message(e.what()));
      return;
    }
    switch (msg.type) {
      case ClientMessage::Type::Join: on_join(msg); break;
      case ClientMessage::Type::Answer: on_answer(msg); break;
      case ClientMessage::Type::Ping: send(pong_message()); break;
      case ClientMessage::Type::Goodbye: close("goodbye"); break;
    }
  }

  void on_join(const ClientMessage& msg) {
    if (msg.token != impl_->server.token) {
      refuse("invalid token");
      return;
    }
    if (!worker_id_.empty()) {
      send(error_message("already joined as " + worker_id_));
      return;
    }
    std::string id = msg.worker_id;
    if (id.empty()) id = "worker-" + std::to_string(++impl_->anonymous_workers);
    if (auto it = impl_->sessions.find(id); it != impl_->sessions.end() && !it->second.expired()) {
      refuse("worker id " + id + " is already connected");
      return;
    }
    worker_id_ = id;
    impl_->sessions[id] = weak_from_this();
    send(welcome_message(id, impl_->dataset.labels.names()));
    impl_->deliver(impl_->broker.join(id, impl_->now()));
  }

  void on_answer(const ClientMessage& msg) {
    if (worker_id_.empty()) {
      send(error_message("join before answering"));
      return;
    }
    const auto label = impl_->dataset.labels.index_of(msg.label);
    if (!label) {
      send(ack_message(msg.query_id, false, "unknown label '" + msg.label + "'"));
      return;
    }
    try {
      auto [answered, ev] = impl_->broker.receive_answer(msg.query_id, worker_id_, *label, impl_->now());
      send(ack_message(msg.query_id, true));
      impl_->on_answer(answered);
      impl_->deliver(ev);
    } catch (const StaleAnswer& e) {
      send(ack_message(msg.query_id, false, e.what()));
    } catch (const std::out_of_range& e) {
      send(ack_message(msg.query_id, false, e.what()));
    }
  }

  void on_gone() {
    if (gone_) return;
    gone_ = true;
    closing_ = true;
    if (worker_id_.empty()) return;
    auto it = impl_->sessions.find(worker_id_);
    if (it != impl_->sessions.end() && it->second.lock().get() == this) impl_->sessions.erase(it);
    impl_->deliver(impl_->broker.depart(worker_id_, impl_->now()));
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<ServerCore> impl_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::string worker_id_;
  std::string reject_reason_;
  std::optional<websocket::close_reason> close_after_flush_;
  bool closing_ = false;
  bool gone_ = false;
};

// ----------------------------------------------------------------------- http

class HttpSession : public std::enable_shared_from_this<HttpSession>, public Connection {
 public:

  HttpSession(tcp::socket socket, std::shared_ptr<ServerCore> impl)
      : stream_(std::move(socket)), impl_(std::move(impl)) {}

  void run() {
    impl_->track(shared_from_this());
    read();
  }

  void force_close() override {
    beast::error_code ec;
    stream_.socket().close(ec);
  }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->on_request();
    });
  }

  void on_request() {
    if (websocket::is_upgrade(req_)) {
      const auto [path, query] = split_target(req_.target());
      if (path == "/ws") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), impl_)->run(std::move(req_));
        return;
      }
    }
    auto res = std::make_shared<http::response<http::string_body>>(impl_->handle_http(req_));
    res->keep_alive(req_.keep_alive());
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  std::shared_ptr<ServerCore> impl_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

http::response<http::string_body> json_response(http::status status, const json& body, unsigned version) {
  http::response<http::string_body> res{status, version};
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.body() = body.dump();
  return res;
}

json error_body(const std::string& reason) {
  return json{{"v", kProtocolVersion}, {"error", reason}};
}

}  // namespace

// ----------------------------------------------------------------- impl logic

void ServerCore::deliver(const BrokerEvents& ev) {
  auto session_for = [&](const std::string& id) -> std::shared_ptr<WsSession> {
    auto it = sessions.find(id);
    return it == sessions.end() ? nullptr : it->second.lock();
  };
  for (const auto& r : ev.revoked) {
    if (auto s = session_for(r.worker_id)) s->send(cancel_message(r.query_id));
  }
  for (const auto& a : ev.assigned) {
    const PendingQuery* q = broker.find(a.query_id);
    auto s = session_for(a.worker_id);
    if (q && s) s->send(task_message(*q, broker.config().deadline));
  }
}

void ServerCore::on_answer(const AnsweredQuery& a) {
  std::shared_ptr<Crowd> c;
  {
    std::lock_guard lk(mu);
    c = crowd;
  }
  if (c) c->deliver_answer(a);
}

void ServerCore::accept() {
  acceptor.async_accept([self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpSession>(std::move(socket), self)->run();
    self->accept();
  });
}

void ServerCore::schedule_scan() {
  scan_timer.expires_after(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(server.scan_interval)));
  scan_timer.async_wait([self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->deliver(self->broker.timeout_scan(self->now()));
    self->schedule_scan();
  });
}

bool ServerCore::authorized(const http::request<http::string_body>& req) const {
  if (auto it = req.find("X-OTJ-Token"); it != req.end() && it->value() == server.token) return true;
  if (auto it = req.find(http::field::authorization); it != req.end() &&
                                                       it->value() == "Bearer " + server.token) {
    return true;
  }
  const auto [path, query] = split_target(req.target());
  auto it = query.find("token");
  return it != query.end() && it->second == server.token;
}

json ServerCore::status_json() const {
  const auto s = broker.stats();
  json j;
  j["v"] = kProtocolVersion;
  {
    std::lock_guard lk(mu);
    j["stream_state"] = to_string(state);
    j["episode"] = current_episode ? json(*current_episode) : json(nullptr);
    j["episodes_completed"] = records.size();
    if (!failure.empty()) j["failure"] = failure;
  }
  j["total_episodes"] = dataset.examples.size();
  j["pool_size"] = s.pool_size;
  j["idle_workers"] = s.idle_workers;
  j["queue_depth"] = s.queue_depth;
  j["pending_queries"] = s.pending;
  j["answered"] = s.answered;
  j["stale_answers"] = s.stale_answers;
  j["retries"] = s.retries;
  j["total_paid"] = s.total_paid;
  j["labels"] = dataset.labels.names();
  return j;
}

json ServerCore::metrics_json() const {
  std::vector<EpisodeRecord> copy;
  {
    std::lock_guard lk(mu);
    copy = records;
  }
  json j;
  j["v"] = kProtocolVersion;
  j["episodes"] = copy.size();
  j["summary"] = json::object();
  j["curve"] = json::array();
  if (copy.empty()) return j;
  const auto m = compute_metrics(copy, dataset.labels, background_for(dataset, config), config.window,
                                 config.query_price);
  for (const auto& [k, v] : m.flatten()) j["summary"][k] = v;
  for (const auto& p : m.curve) {
    j["curve"].push_back({{"episode_window", p.episode_window},
                          {"f1", p.f1},
                          {"qs_per_token", p.qs_per_token},
                          {"delay", p.delay_per_token}});
  }
  return j;
}

std::optional<json> ServerCore::marginals_json(std::size_t episode) const {
  std::lock_guard lk(mu);
  auto it = marginals.find(episode);
  if (it == marginals.end()) return std::nullopt;
  const auto& view = it->second;
  json rows = json::array();
  for (std::size_t i = 0; i < view.node.rows(); ++i) {
    const auto r = view.node.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return json{{"v", kProtocolVersion},
              {"episode", episode},
              {"tokens", view.tokens},
              {"labels", dataset.labels.names()},
              {"marginals", rows},
              {"received", view.received}};
}

http::response<http::string_body> ServerCore::handle_http(const http::request<http::string_body>& req) {
  const unsigned version = req.version();
  if (!authorized(req)) return json_response(http::status::unauthorized, error_body("missing or invalid token"), version);
  const auto [path, query] = split_target(req.target());
  const bool get = req.method() == http::verb::get;
  const bool post = req.method() == http::verb::post;

  if (get && path == "/status") return json_response(http::status::ok, status_json(), version);
  if (get && path == "/metrics") return json_response(http::status::ok, metrics_json(), version);
  if (get && path.rfind("/marginals/", 0) == 0) {
    const std::string arg = path.substr(std::string("/marginals/").size());
    std::size_t episode = 0;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), episode);
    if (ec != std::errc{} || ptr != arg.data() + arg.size()) {
      return json_response(http::status::bad_request, error_body("episode must be a number"), version);
    }
    if (auto body = marginals_json(episode)) return json_response(http::status::ok, *body, version);
    return json_response(http::status::not_found, error_body("no marginals for that episode"), version);
  }
  if (post && path == "/stream/start") {
    const bool started = start_stream();
    json body{{"v", kProtocolVersion}, {"started", started}};
    {
      std::lock_guard lk(mu);
      body["stream_state"] = to_string(state);
    }
    return json_response(started ? http::status::ok : http::status::conflict, body, version);
  }
  if (post && path == "/stream/stop") {
    stop_stream();
    json body{{"v", kProtocolVersion}};
    {
      std::lock_guard lk(mu);
      body["stream_state"] = to_string(state);
    }
    return json_response(http::status::ok, body, version);
  }
  return json_response(http::status::not_found, error_body("no such endpoint"), version);
}

bool ServerCore::start_stream() {
  std::lock_guard lk(mu);
  if (shut_down || state == StreamState::Running || state == StreamState::Stopping) return false;
  if (stream_thread.joinable()) stream_thread.join();  // previous run has ended
  state = StreamState::Running;
  failure.clear();
  records.clear();
  marginals.clear();
  current_episode.reset();
  stop_flag = false;
  crowd = std::make_shared<Crowd>(shared_from_this());
  stream_thread = std::thread([self = shared_from_this()] { self->run_stream(); });
  return true;
}

void ServerCore::stop_stream() {
  std::shared_ptr<Crowd> c;
  {
    std::lock_guard lk(mu);
    if (state != StreamState::Running) return;
    state = StreamState::Stopping;
    stop_flag = true;
    c = crowd;
  }
  if (c) {
    c->stop();
    const std::size_t ep = c->episode();
    // No further tasks for the abandoned episode.
    asio::post(ioc, [self = shared_from_this(), ep] { self->deliver(self->broker.close_episode(ep, self->now())); });
  }
}

void ServerCore::run_stream() {
  struct Observer final : StreamObserver {
    ServerCore& impl;
    std::ofstream trajectory;
    std::ofstream episodes;

    explicit Observer(ServerCore& i) : impl(i) {}

    void on_event(const TrajectoryEvent& e) override {
      write_trajectory_event(trajectory, e);
      trajectory.flush();
    }
    void on_marginals(std::size_t episode, const Marginals& m) override {
      std::lock_guard lk(impl.mu);
      auto& view = impl.marginals[episode];
      if (view.tokens.empty()) {
        // Episode index equals position in the stream order; look the tokens up once.
        view.tokens = impl.dataset.examples.at(impl_order.at(episode)).input.tokens;
        view.received = 0;
      } else {
        ++view.received;
      }
      view.node = m.node;
      impl.current_episode = episode;
    }
    void on_episode(const EpisodeRecord& r) override {
      episodes << episode_to_json(r, impl.dataset.labels).dump() << '\n';
      episodes.flush();
      std::lock_guard lk(impl.mu);
      impl.records.push_back(r);
    }
    bool stop_requested() const override { return impl.stop_flag.load(); }

    std::vector<std::size_t> impl_order;
  };

  Observer observer(*this);
  StreamState final_state = StreamState::Finished;
  std::string error;
  std::shared_ptr<Crowd> c;
  {
    std::lock_guard lk(mu);
    c = crowd;
  }
  try {
    std::filesystem::create_directories(config.output_dir);
    observer.trajectory.open(config.output_dir / "trajectory.jsonl");
    observer.episodes.open(config.output_dir / "episodes.jsonl");
    if (!observer.trajectory || !observer.episodes) {
      throw std::runtime_error("cannot write into " + config.output_dir.string());
    }
    StreamRunner runner(dataset, config, *c, &observer);
    observer.impl_order = runner.stream_order();
    runner.run();
    if (stop_flag) final_state = StreamState::Stopped;
  } catch (const StreamStopped&) {
    final_state = StreamState::Stopped;
  } catch (const std::exception& e) {
    final_state = StreamState::Failed;
    error = e.what();
  }

  std::vector<EpisodeRecord> done;
  {
    std::lock_guard lk(mu);
    done = records;
  }
  if (!done.empty()) {
    try {
      const auto summary = compute_metrics(done, dataset.labels, background_for(dataset, config), config.window,
                                           config.query_price);
      export_results(done, summary, dataset.labels, config.output_dir);
    } catch (const std::exception& e) {
      if (error.empty()) error = e.what();
      final_state = StreamState::Failed;
    }
  }
  std::lock_guard lk(mu);
  state = final_state;
  failure = error;
  current_episode.reset();
}

// ------------------------------------------------------------------ interface

LiveServer::LiveServer(Dataset dataset, RunConfig config, ServerConfig server)
    : impl_(std::make_shared<ServerCore>(std::move(dataset), std::move(config), std::move(server))) {
  impl_->config.validate();
}

LiveServer::~LiveServer() {
  try {
    shutdown();
  } catch (...) {
  }
}

std::uint16_t LiveServer::start() {
  auto& i = *impl_;
  beast::error_code ec;
  const auto address = asio::ip::make_address(i.server.host, ec);
  if (ec) throw BindError("invalid host '" + i.server.host + "': " + ec.message());
  const tcp::endpoint ep{address, i.server.port};
  i.acceptor.open(ep.protocol(), ec);
  if (!ec) i.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) i.acceptor.bind(ep, ec);
  if (!ec) i.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) {
    throw BindError("cannot listen on " + i.server.host + ":" + std::to_string(i.server.port) + ": " + ec.message());
  }
  i.bound_port = i.acceptor.local_endpoint().port();
  i.accept();
  i.schedule_scan();
  i.io_thread = std::thread([impl = impl_] { impl->ioc.run(); });
  return i.bound_port;
}

std::uint16_t LiveServer::port() const { return impl_->bound_port; }

bool LiveServer::start_stream() {
  std::promise<bool> p;
  auto f = p.get_future();
  asio::post(impl_->ioc, [&] { p.set_value(impl_->start_stream()); });
  return f.get();
}

void LiveServer::stop_stream() { impl_->stop_stream(); }

bool LiveServer::wait_stream(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    const auto s = stream_state();
    if (s != StreamState::Running && s != StreamState::Stopping) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return false;
}

StreamState LiveServer::stream_state() const {
  std::lock_guard lk(impl_->mu);
  return impl_->state;
}

json LiveServer::status() const {
  std::promise<json> p;
  auto f = p.get_future();
  asio::post(impl_->ioc, [&] { p.set_value(impl_->status_json()); });
  return f.get();
}

void LiveServer::shutdown() {
  auto& i = *impl_;
  {
    std::lock_guard lk(i.mu);
    if (i.shut_down) return;
    i.shut_down = true;
  }
  i.stop_stream();
  if (i.stream_thread.joinable()) i.stream_thread.join();
  if (i.io_thread.joinable()) {
    asio::post(i.ioc, [impl = impl_] {
      beast::error_code ec;
      impl->acceptor.close(ec);
      impl->scan_timer.cancel();
      for (auto& [id, weak] : impl->sessions) {
        if (auto s = weak.lock()) s->close("server shutting down");
      }
    });
    // Give close frames a moment to flush before the loop stops.
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    i.ioc.stop();
    i.io_thread.join();
    // A close handshake cut short by the stop leaves its socket open and the
    // peer waiting for EOF. Close what is left, then run the aborted
    // handlers so the sessions release their sockets.
    for (auto& weak : i.connections) {
      if (auto c = weak.lock()) c->force_close();
    }
    i.ioc.restart();
    i.ioc.poll();
  }
}

}  // namespace otj
