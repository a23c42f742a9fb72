// End-to-end checks of the live service: robot workers over WebSocket,
// operator calls over HTTP.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <fstream>
#include <mutex>
#include <thread>

#include "support/temp_dir.hpp"
#include "httplib.h"
#include "json.hpp"
#include "otj/errors.hpp"
#include "otj/messages.hpp"
#include "otj/metrics.hpp"
#include "otj/server.hpp"
#include "otj/synthetic.hpp"

using namespace otj;
using json = nlohmann::json;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

constexpr const char* kToken = "robot-secret";

Dataset tiny_dataset(std::size_t examples) {
  SyntheticConfig sc;
  sc.examples = examples;
  sc.length = 3;
  sc.seed = 21;
  return generate_synthetic(sc);
}

/// Synchronous WebSocket client.
class WsClient {
 public:
  explicit WsClient(std::uint16_t port, const std::string& target = "/ws") {
    tcp::resolver resolver(ioc_);
    asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", target);
  }

  void send(const std::string& text) {
    std::lock_guard lk(write_mu_);
    ws_.write(asio::buffer(text));
  }

  /// Next frame, or nullopt once the connection is closed.
  std::optional<json> read() {
    beast::flat_buffer buf;
    beast::error_code ec;
    ws_.read(buf, ec);
    if (ec) return std::nullopt;
    return json::parse(beast::buffers_to_string(buf.data()));
  }

  websocket::close_reason close_reason() const { return ws_.reason(); }

  void close() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

 private:
  asio::io_context ioc_;
  websocket::stream<tcp::socket> ws_{ioc_};
  std::mutex write_mu_;
};

/// Joins the pool and answers every task with the first offered label after
/// a fixed delay. Optionally answers its first task twice.
class Robot {
 public:
  Robot(std::uint16_t port, std::string id, double delay, bool double_send_first = false)
      : client_(port), id_(std::move(id)), delay_(delay), double_send_(double_send_first) {
    client_.send(join_message(id_, kToken));
    thread_ = std::thread([this] { loop(); });
  }
  ~Robot() {
    if (thread_.joinable()) thread_.join();
  }

  std::size_t answered() const { return answered_; }
  std::size_t accepted() const { return accepted_; }
  std::size_t rejected() const { return rejected_; }
  bool welcomed() const { return welcomed_; }

  /// Waits for the server to close the connection.
  void join() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  void loop() {
    while (auto frame = client_.read()) {
      const auto type = frame->value("type", "");
      if (type == "welcome") {
        welcomed_ = true;
      } else if (type == "task") {
        std::this_thread::sleep_for(std::chrono::duration<double>(delay_));
        const auto label = (*frame)["labels"][0].get<std::string>();
        const auto id = (*frame)["query_id"].get<QueryId>();
        client_.send(answer_message(id, label));
        ++answered_;
        if (double_send_) {
          client_.send(answer_message(id, label));
          double_send_ = false;
        }
      } else if (type == "ack") {
        ((*frame)["accepted"].get<bool>() ? accepted_ : rejected_)++;
      }
    }
  }

  WsClient client_;
  std::string id_;
  double delay_;
  bool double_send_;
  std::atomic<std::size_t> answered_{0}, accepted_{0}, rejected_{0};
  std::atomic<bool> welcomed_{false};
  std::thread thread_;
};

httplib::Headers auth() { return {{"X-OTJ-Token", kToken}}; }

json get_json(httplib::Client& cli, const std::string& path) {
  auto res = cli.Get(path, auth());
  REQUIRE(res);
  REQUIRE(res->status == 200);
  return json::parse(res->body);
}

void wait_for(const std::function<bool()>& pred, double seconds = 10.0) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  while (!pred() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

json endpoint_fields() {
  std::ifstream in(OTJ_SCHEMA_PATH);
  return json::parse(in)["operator_endpoints"];
}

}  // namespace

TEST_CASE("robot workers with a 1 s delay give 1.0-1.25 s latencies and a valid episode file") {
  otj::testing::TempDir out;
  const auto data = tiny_dataset(3);
  RunConfig cfg;
  cfg.policy = "nvote:1";
  cfg.output_dir = out.path();
  ServerConfig sc;
  sc.port = 0;
  sc.token = kToken;
  LiveServer server(data, cfg, sc);
  const auto port = server.start();
  REQUIRE(port != 0);

  httplib::Client http("127.0.0.1", port);
  const auto fields = endpoint_fields();

  {
    // One robot per token so no query waits in the queue; the first robot
    // double-sends once.
    Robot r0(port, "r0", 1.0, true), r1(port, "r1", 1.0), r2(port, "r2", 1.0);
    wait_for([&] { return get_json(http, "/status")["pool_size"] == 3; });

    auto status = get_json(http, "/status");
    for (const auto& f : fields["GET /status"]) CHECK_MESSAGE(status.contains(f.get<std::string>()), f);
    CHECK(status["v"] == 1);
    CHECK(status["stream_state"] == "idle");
    CHECK(status["idle_workers"] == 3);
    CHECK(status["total_paid"].get<double>() == doctest::Approx(3.0));

    auto res = http.Post("/stream/start", auth(), "", "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    for (const auto& f : fields["POST /stream/start"]) CHECK(json::parse(res->body).contains(f.get<std::string>()));
    res = http.Post("/stream/start", auth(), "", "application/json");
    REQUIRE(res);
    CHECK(res->status == 409);

    REQUIRE(server.wait_stream(std::chrono::seconds(30)));
    CHECK(server.stream_state() == StreamState::Finished);

    wait_for([&] { return r0.accepted() + r0.rejected() >= 2; });
    CHECK(r0.rejected() == 1);  // the duplicate
    CHECK(r0.accepted() + r1.accepted() + r2.accepted() == 9);

    status = get_json(http, "/status");
    CHECK(status["stream_state"] == "finished");
    CHECK(status["episodes_completed"] == 3);
    CHECK(status["answered"] == 9);
    CHECK(status["stale_answers"] == 1);
    CHECK(status["pending_queries"] == 0);
    // Three join bonuses plus ten paid answers (one of them stale).
    CHECK(status["total_paid"].get<double>() == doctest::Approx(3.10));

    const auto metrics = get_json(http, "/metrics");
    for (const auto& f : fields["GET /metrics"]) CHECK(metrics.contains(f.get<std::string>()));
    CHECK(metrics["episodes"] == 3);
    CHECK(metrics["summary"]["queries"] == 9.0);

    const auto marg = get_json(http, "/marginals/2");
    for (const auto& f : fields["GET /marginals/<episode>"]) CHECK(marg.contains(f.get<std::string>()));
    CHECK(marg["tokens"].size() == 3);
    CHECK(marg["received"] == 3);
    for (const auto& row : marg["marginals"]) {
      double total = 0.0;
      for (const auto& v : row) total += v.get<double>();
      CHECK(total == doctest::Approx(1.0));
    }
    auto missing = http.Get("/marginals/99", auth());
    REQUIRE(missing);
    CHECK(missing->status == 404);

    server.shutdown();
  }

  const auto records = load_episodes(out / "episodes.jsonl", data.labels);
  REQUIRE(records.size() == 3);
  for (const auto& r : records) {
    CHECK(r.queries.size() == 3);
    for (const auto& q : r.queries) {
      REQUIRE(q.arrival_time.has_value());
      REQUIRE(q.response.has_value());
      const double latency = *q.arrival_time - q.issue_time;
      CHECK(latency >= 1.0);
      CHECK(latency <= 1.25);
    }
    CHECK(r.predicted == std::vector<LabelIndex>(3, 0));  // robots always pick the first label
  }
  // Same metrics pipeline as the simulator.
  const auto summary = compute_metrics(records, data.labels, std::string("NONE"), 50, 0.01);
  CHECK(summary.queries == 9);
  CHECK(std::filesystem::exists(out / "summary.txt"));
  CHECK(std::filesystem::exists(out / "curve.csv"));
  CHECK(std::filesystem::exists(out / "trajectory.jsonl"));
}

TEST_CASE("operator endpoints require the token") {
  const auto data = tiny_dataset(2);
  ServerConfig sc;
  sc.port = 0;
  sc.token = kToken;
  otj::testing::TempDir out;
  RunConfig cfg;
  cfg.output_dir = out.path();
  LiveServer server(data, cfg, sc);
  const auto port = server.start();
  httplib::Client http("127.0.0.1", port);

  auto res = http.Get("/status");
  REQUIRE(res);
  CHECK(res->status == 401);
  res = http.Get("/status", {{"X-OTJ-Token", "wrong"}});
  REQUIRE(res);
  CHECK(res->status == 401);
  res = http.Post("/stream/start", "", "application/json");
  REQUIRE(res);
  CHECK(res->status == 401);
  CHECK(server.stream_state() == StreamState::Idle);

  res = http.Get("/status", {{"Authorization", std::string("Bearer ") + kToken}});
  REQUIRE(res);
  CHECK(res->status == 200);
  res = http.Get(std::string("/status?token=") + kToken);
  REQUIRE(res);
  CHECK(res->status == 200);
  res = http.Get("/nowhere", auth());
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(server.status()["stream_state"] == "idle");
}

TEST_CASE("a wrong token on connect is refused with a reason frame") {
  const auto data = tiny_dataset(2);
  ServerConfig sc;
  sc.port = 0;
  sc.token = kToken;
  otj::testing::TempDir out;
  RunConfig cfg;
  cfg.output_dir = out.path();
  LiveServer server(data, cfg, sc);
  const auto port = server.start();

  {
    WsClient ws(port);
    ws.send(join_message("intruder", "not-the-token"));
    const auto frame = ws.read();
    REQUIRE(frame.has_value());
    CHECK((*frame)["type"] == "error");
    CHECK((*frame)["reason"].get<std::string>().find("token") != std::string::npos);
    CHECK_FALSE(ws.read().has_value());  // server closed
    CHECK(ws.close_reason().code == websocket::close_code::policy_error);
  }
  {
    WsClient ws(port, "/ws?token=nope");
    const auto frame = ws.read();
    REQUIRE(frame.has_value());
    CHECK((*frame)["type"] == "error");
    CHECK_FALSE(ws.read().has_value());
  }
  CHECK(server.status()["pool_size"] == 0);

  // Protocol errors keep the connection open.
  WsClient ws(port);
  ws.send("garbage");
  auto frame = ws.read();
  REQUIRE(frame);
  CHECK((*frame)["type"] == "error");
  ws.send(answer_message(1, "NONE"));
  frame = ws.read();
  REQUIRE(frame);
  CHECK((*frame)["type"] == "error");  // must join first
  ws.send(ping_message());
  frame = ws.read();
  REQUIRE(frame);
  CHECK((*frame)["type"] == "pong");
  ws.close();
}

TEST_CASE("stopping mid-stream flushes a complete, parseable episode file") {
  otj::testing::TempDir out;
  const auto data = tiny_dataset(40);
  RunConfig cfg;
  cfg.policy = "nvote:1";
  cfg.output_dir = out.path();
  ServerConfig sc;
  sc.port = 0;
  sc.token = kToken;
  LiveServer server(data, cfg, sc);
  const auto port = server.start();
  httplib::Client http("127.0.0.1", port);

  Robot fast(port, "fast", 0.02);
  wait_for([&] { return fast.welcomed(); });
  REQUIRE(server.start_stream());
  wait_for([&] { return get_json(http, "/status")["episodes_completed"].get<int>() >= 3; });

  auto res = http.Post("/stream/stop", auth(), "", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  REQUIRE(server.wait_stream(std::chrono::seconds(10)));
  CHECK(server.stream_state() == StreamState::Stopped);

  const auto status = get_json(http, "/status");
  const auto done = status["episodes_completed"].get<std::size_t>();
  CHECK(done >= 3);
  CHECK(done < data.examples.size());
  CHECK(status["pending_queries"] == 0);

  const auto records = load_episodes(out / "episodes.jsonl", data.labels);
  CHECK(records.size() == done);
  for (std::size_t e = 0; e < records.size(); ++e) CHECK(records[e].episode == e);
  CHECK(std::filesystem::exists(out / "summary.txt"));

  // A stopped stream can be restarted from scratch.
  CHECK(server.start_stream());
  server.shutdown();
  CHECK(server.stream_state() == StreamState::Stopped);
}

TEST_CASE("binding a taken port fails with BindError") {
  const auto data = tiny_dataset(1);
  ServerConfig sc;
  sc.port = 0;
  sc.token = kToken;
  otj::testing::TempDir out;
  RunConfig cfg;
  cfg.output_dir = out.path();
  LiveServer first(data, cfg, sc);
  sc.port = first.start();
  LiveServer second(data, cfg, sc);
  CHECK_THROWS_AS(second.start(), BindError);
}

TEST_CASE("a departing worker's task is reassigned to another worker") {
  otj::testing::TempDir out;
  const auto data = tiny_dataset(1);
  RunConfig cfg;
  cfg.policy = "nvote:1";
  cfg.output_dir = out.path();
  ServerConfig sc;
  sc.port = 0;
  sc.token = kToken;
  LiveServer server(data, cfg, sc);
  const auto port = server.start();

  // A worker that takes one task and leaves without answering.
  {
    WsClient quitter(port);
    quitter.send(join_message("quitter", kToken));
    REQUIRE(quitter.read()->at("type") == "welcome");
    REQUIRE(server.start_stream());
    auto task = quitter.read();
    REQUIRE(task);
    CHECK((*task)["type"] == "task");
    quitter.close();
  }
  Robot helper(port, "helper", 0.01);
  REQUIRE(server.wait_stream(std::chrono::seconds(10)));
  CHECK(server.stream_state() == StreamState::Finished);
  CHECK(helper.answered() == 3);
  server.shutdown();
}
