#pragma once

// Version-1 worker protocol: one JSON object per WebSocket text frame, every
// object carrying "v": 1 and a "type". Unknown fields are ignored.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "otj/broker.hpp"

namespace otj {

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ClientMessage {
  enum class Type { Join, Answer, Ping, Goodbye };
  Type type = Type::Ping;
  std::string worker_id;  // join
  std::string token;      // join
  QueryId query_id = 0;   // answer
  std::string label;      // answer
};

/// Throws ProtocolError on malformed JSON, a wrong version, an unknown type
/// or missing fields.
ClientMessage parse_client_message(const std::string& text);

std::string join_message(const std::string& worker_id, const std::string& token);
std::string answer_message(QueryId query_id, const std::string& label);
std::string ping_message();
std::string goodbye_message();

std::string welcome_message(const std::string& worker_id, const std::vector<std::string>& labels);
std::string task_message(const PendingQuery& query, double deadline_seconds);
std::string cancel_message(QueryId query_id);
std::string ack_message(QueryId query_id, bool accepted, const std::string& reason = {});
std::string pong_message();
std::string error_message(const std::string& reason);

}  // namespace otj
