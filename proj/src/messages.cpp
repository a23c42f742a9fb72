#include "otj/messages.hpp"

namespace otj {

namespace {

using json = nlohmann::json;

json envelope(const char* type) {
  json j;
  j["v"] = kProtocolVersion;
  j["type"] = type;
  return j;
}

template <class T>
T required(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ProtocolError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

ClientMessage parse_client_message(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error&) {
    throw ProtocolError("frame is not valid JSON");
  }
  if (!j.is_object()) throw ProtocolError("frame must be a JSON object");
  if (required<int>(j, "v") != kProtocolVersion) throw ProtocolError("unsupported protocol version");
  const auto type = required<std::string>(j, "type");
  ClientMessage m;
  if (type == "join") {
    m.type = ClientMessage::Type::Join;
    m.token = required<std::string>(j, "token");
    if (auto it = j.find("worker_id"); it != j.end() && it->is_string()) m.worker_id = it->get<std::string>();
  } else if (type == "answer") {
    m.type = ClientMessage::Type::Answer;
    m.query_id = required<QueryId>(j, "query_id");
    m.label = required<std::string>(j, "label");
  } else if (type == "ping") {
    m.type = ClientMessage::Type::Ping;
  } else if (type == "goodbye") {
    m.type = ClientMessage::Type::Goodbye;
  } else {
    throw ProtocolError("unknown message type '" + type + "'");
  }
  return m;
}

std::string join_message(const std::string& worker_id, const std::string& token) {
  auto j = envelope("join");
  if (!worker_id.empty()) j["worker_id"] = worker_id;
  j["token"] = token;
  return j.dump();
}

std::string answer_message(QueryId query_id, const std::string& label) {
  auto j = envelope("answer");
  j["query_id"] = query_id;
  j["label"] = label;
  return j.dump();
}

std::string ping_message() { return envelope("ping").dump(); }
std::string goodbye_message() { return envelope("goodbye").dump(); }
std::string pong_message() { return envelope("pong").dump(); }

std::string welcome_message(const std::string& worker_id, const std::vector<std::string>& labels) {
  auto j = envelope("welcome");
  j["worker_id"] = worker_id;
  j["labels"] = labels;
  return j.dump();
}

std::string task_message(const PendingQuery& query, double deadline_seconds) {
  auto j = envelope("task");
  j["query_id"] = query.id;
  j["episode"] = query.episode;
  j["tokens"] = query.tokens;
  j["highlight_index"] = query.position;
  j["labels"] = query.labels;
  j["deadline_seconds"] = deadline_seconds;
  return j.dump();
}

std::string cancel_message(QueryId query_id) {
  auto j = envelope("cancel");
  j["query_id"] = query_id;
  return j.dump();
}

std::string ack_message(QueryId query_id, bool accepted, const std::string& reason) {
  auto j = envelope("ack");
  j["query_id"] = query_id;
  j["accepted"] = accepted;
  if (!reason.empty()) j["reason"] = reason;
  return j.dump();
}

std::string error_message(const std::string& reason) {
  auto j = envelope("error");
  j["reason"] = reason;
  return j.dump();
}

}  // namespace otj
