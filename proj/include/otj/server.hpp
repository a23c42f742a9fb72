#pragma once

// Live service: a WebSocket retainer pool for human (or robot) workers plus
// HTTP operator endpoints, driving the same streaming loop as the simulator.
// All broker and session state lives on one I/O thread; the stream runs on
// its own thread and talks to the broker by posting onto that thread.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "json.hpp"
#include "otj/broker.hpp"
#include "otj/config.hpp"
#include "otj/dataset.hpp"

namespace otj {

struct ServerCore;

struct ServerConfig {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  std::uint16_t port = 8080;
  std::string token;
  BrokerConfig broker;
  /// Seconds between deadline scans.
  double scan_interval = 0.25;
};

enum class StreamState { Idle, Running, Stopping, Stopped, Finished, Failed };

std::string to_string(StreamState s);

class LiveServer {
 public:
  LiveServer(Dataset dataset, RunConfig config, ServerConfig server);
  ~LiveServer();
  LiveServer(const LiveServer&) = delete;
  LiveServer& operator=(const LiveServer&) = delete;

  /// Binds and starts serving; returns the bound port. Throws BindError.
  std::uint16_t start();
  std::uint16_t port() const;

  /// Starts a fresh stream unless one is running. Returns false if one is.
  bool start_stream();
  /// Asks the running stream to stop; the current episode is abandoned.
  void stop_stream();
  /// Waits for the stream thread to end; false on timeout.
  bool wait_stream(std::chrono::milliseconds timeout);
  StreamState stream_state() const;

  /// Stops the stream, flushes exports and closes every connection.
  void shutdown();

  /// Same document as GET /status.
  nlohmann::json status() const;

 private:
  std::shared_ptr<ServerCore> impl_;
};

}  // namespace otj
