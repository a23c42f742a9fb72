#include <cmath>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "otj/broker.hpp"
#include "otj/errors.hpp"
#include "otj/messages.hpp"

using namespace otj;

namespace {

PendingQuery query_for(std::size_t episode, std::size_t position = 0) {
  PendingQuery q;
  q.episode = episode;
  q.game_index = position;
  q.position = position;
  q.tokens = {"George", "in", "Paris"};
  q.labels = {"NONE", "PER", "LOC"};
  return q;
}

}  // namespace

// ------------------------------------------------------------------- broker

TEST_CASE("two idle workers: the query goes to the one idle longer") {
  Broker b;
  b.join("early", 1.0);
  b.join("late", 2.0);
  const auto [id, ev] = b.submit(query_for(0), 3.0);
  REQUIRE(ev.assigned.size() == 1);
  CHECK(ev.assigned[0].worker_id == "early");
  CHECK(ev.assigned[0].query_id == id);
  CHECK(b.worker("early")->state == WorkerState::Assigned);
  CHECK(b.find(id)->issue_time == 3.0);
}

TEST_CASE("with no workers the query waits for the first join") {
  Broker b;
  const auto [id, ev] = b.submit(query_for(0), 0.0);
  CHECK(ev.assigned.empty());
  CHECK(b.queue().size() == 1);
  const auto joined = b.join("w", 5.0);
  REQUIRE(joined.assigned.size() == 1);
  CHECK(joined.assigned[0].query_id == id);
  CHECK(b.queue().empty());
}

TEST_CASE("queued queries are served first in first out") {
  Broker b;
  const auto a = b.submit(query_for(0, 0), 0.0).first;
  const auto c = b.submit(query_for(0, 1), 0.1).first;
  auto ev = b.join("w", 1.0);
  REQUIRE(ev.assigned.size() == 1);
  CHECK(ev.assigned[0].query_id == a);
  ev = b.receive_answer(a, "w", 1, 2.0).second;
  REQUIRE(ev.assigned.size() == 1);
  CHECK(ev.assigned[0].query_id == c);
}

TEST_CASE("a departing worker's query returns to the head of the queue") {
  Broker b;
  b.join("w1", 0.0);
  const auto first = b.submit(query_for(0, 0), 1.0).first;
  const auto second = b.submit(query_for(0, 1), 1.1).first;
  CHECK(b.queue().size() == 1);
  b.depart("w1", 2.0);
  REQUIRE(b.queue().size() == 2);
  CHECK(b.queue().front() == first);
  CHECK(b.queue().back() == second);
  CHECK(b.stats().pool_size == 0);
  const auto ev = b.join("w2", 3.0);
  CHECK(ev.assigned.at(0).query_id == first);
}

TEST_CASE("a valid answer yields arrival after issue and frees the worker") {
  Broker b;
  b.join("w", 0.0);
  const auto id = b.submit(query_for(4, 2), 10.0).first;
  const auto [ans, ev] = b.receive_answer(id, "w", 2, 11.5);
  CHECK(ans.episode == 4);
  CHECK(ans.position == 2);
  CHECK(ans.label == 2u);
  CHECK(ans.arrival_time == 11.5);
  CHECK(ans.arrival_time > ans.issue_time);
  CHECK(b.worker("w")->state == WorkerState::Idle);
  CHECK(b.worker("w")->completed == 1);
  CHECK(b.find(id) == nullptr);
}

TEST_CASE("an answer stamped at the issue instant still lands strictly after it") {
  Broker b;
  b.join("w", 0.0);
  const auto id = b.submit(query_for(0), 7.0).first;
  const auto ans = b.receive_answer(id, "w", 0, 7.0).first;
  CHECK(ans.arrival_time > 7.0);
  CHECK(ans.arrival_time == std::nextafter(7.0, 8.0));
}

TEST_CASE("duplicate answers are stale, counted and paid, and change nothing") {
  BrokerConfig cfg;
  cfg.join_bonus = 1.0;
  cfg.query_price = 0.01;
  Broker b(cfg);
  b.join("w", 0.0);
  const auto id = b.submit(query_for(0), 1.0).first;
  b.receive_answer(id, "w", 1, 2.0);
  const auto before = b.stats();
  CHECK_THROWS_AS(b.receive_answer(id, "w", 1, 2.1), StaleAnswer);
  const auto after = b.stats();
  CHECK(after.answered == before.answered);
  CHECK(after.stale_answers == before.stale_answers + 1);
  CHECK(after.total_paid == doctest::Approx(before.total_paid + 0.01));
  CHECK(after.total_paid == doctest::Approx(1.02));
}

TEST_CASE("answers after the episode closes are stale") {
  Broker b;
  b.join("w", 0.0);
  const auto id = b.submit(query_for(3), 1.0).first;
  const auto ev = b.close_episode(3, 1.5);
  REQUIRE(ev.revoked.size() == 1);
  CHECK(ev.revoked[0].worker_id == "w");
  CHECK(b.worker("w")->state == WorkerState::Idle);
  CHECK_THROWS_AS(b.receive_answer(id, "w", 0, 2.0), StaleAnswer);
  CHECK(b.stats().pending == 0);
}

TEST_CASE("closing an episode leaves other episodes alone and drops queued work") {
  Broker b;
  const auto q1 = b.submit(query_for(1), 0.0).first;
  const auto q2 = b.submit(query_for(2), 0.0).first;
  b.close_episode(1, 0.5);
  REQUIRE(b.queue().size() == 1);
  CHECK(b.queue().front() == q2);
  CHECK(b.find(q1) == nullptr);
}

TEST_CASE("answers from a worker who does not hold the query are stale") {
  Broker b;
  b.join("a", 0.0);
  b.join("b", 0.5);
  const auto id = b.submit(query_for(0), 1.0).first;  // goes to a
  CHECK_THROWS_AS(b.receive_answer(id, "b", 0, 2.0), StaleAnswer);
  CHECK_THROWS_AS(b.receive_answer(999, "a", 0, 2.0), StaleAnswer);
  CHECK_THROWS_AS(b.receive_answer(id, "ghost", 0, 2.0), StaleAnswer);
  CHECK(b.find(id) != nullptr);
}

TEST_CASE("an out-of-range label is refused without payment") {
  Broker b;
  b.join("w", 0.0);
  const auto id = b.submit(query_for(0), 1.0).first;
  const double paid = b.stats().total_paid;
  CHECK_THROWS_AS(b.receive_answer(id, "w", 9, 2.0), std::out_of_range);
  CHECK(b.stats().total_paid == doctest::Approx(paid));
  CHECK(b.find(id) != nullptr);
}

TEST_CASE("deadline: old assignments move, fresh ones stay, retries count") {
  BrokerConfig cfg;
  cfg.deadline = 30.0;
  Broker b(cfg);
  b.join("slow", 0.0);
  const auto id = b.submit(query_for(0), 0.0).first;
  CHECK(b.timeout_scan(29.0).revoked.empty());
  b.join("fast", 10.0);
  auto ev = b.timeout_scan(30.5);
  REQUIRE(ev.revoked.size() == 1);
  CHECK(ev.revoked[0].worker_id == "slow");
  REQUIRE(ev.assigned.size() == 1);
  CHECK(ev.assigned[0].worker_id == "fast");  // idle since 10, slow only since 30.5
  CHECK(b.find(id)->retries == 1);
  ev = b.timeout_scan(61.0);
  CHECK(b.find(id)->retries == 2);
  CHECK(b.stats().retries == 2);
  // The first holder answering late is stale but paid.
  CHECK_THROWS_AS(b.receive_answer(id, "fast", 1, 61.5), StaleAnswer);
}

TEST_CASE("join bonus is paid once even across reconnects") {
  Broker b;
  b.join("w", 0.0);
  b.depart("w", 1.0);
  b.join("w", 2.0);
  CHECK(b.worker("w")->payment == doctest::Approx(1.0));
  CHECK(b.stats().pool_size == 1);
}

TEST_CASE("a worker never holds two queries") {
  Broker b;
  b.join("w", 0.0);
  for (int i = 0; i < 5; ++i) b.submit(query_for(0, static_cast<std::size_t>(i)), 1.0);
  std::size_t held = 0;
  for (const auto& [id, w] : b.workers()) held += w.query.has_value();
  CHECK(held == 1);
  CHECK(b.stats().queue_depth == 4);
  CHECK(b.stats().pending == 5);
}

TEST_CASE("broker rejects a non-positive deadline") {
  BrokerConfig cfg;
  cfg.deadline = 0.0;
  CHECK_THROWS_AS(Broker{cfg}, std::invalid_argument);
}

// ----------------------------------------------------------------- messages

TEST_CASE("client frames parse, unknown fields are ignored") {
  auto m = parse_client_message(R"({"v":1,"type":"join","token":"s","worker_id":"w7","extra":[1,2]})");
  CHECK(m.type == ClientMessage::Type::Join);
  CHECK(m.token == "s");
  CHECK(m.worker_id == "w7");
  m = parse_client_message(R"({"v":1,"type":"answer","query_id":12,"label":"PER"})");
  CHECK(m.type == ClientMessage::Type::Answer);
  CHECK(m.query_id == 12u);
  CHECK(m.label == "PER");
  CHECK(parse_client_message(ping_message()).type == ClientMessage::Type::Ping);
  CHECK(parse_client_message(goodbye_message()).type == ClientMessage::Type::Goodbye);
}

TEST_CASE("bad client frames raise protocol errors") {
  CHECK_THROWS_AS(parse_client_message("not json"), ProtocolError);
  CHECK_THROWS_AS(parse_client_message("[1]"), ProtocolError);
  CHECK_THROWS_AS(parse_client_message(R"({"type":"ping"})"), ProtocolError);
  CHECK_THROWS_AS(parse_client_message(R"({"v":2,"type":"ping"})"), ProtocolError);
  CHECK_THROWS_AS(parse_client_message(R"({"v":1,"type":"dance"})"), ProtocolError);
  CHECK_THROWS_AS(parse_client_message(R"({"v":1,"type":"answer","label":"PER"})"), ProtocolError);
  CHECK_THROWS_AS(parse_client_message(R"({"v":1,"type":"answer","query_id":"x","label":"PER"})"),
                  ProtocolError);
  CHECK_THROWS_AS(parse_client_message(R"({"v":1,"type":"join"})"), ProtocolError);
}

TEST_CASE("client builders round-trip through the parser") {
  const auto j = parse_client_message(join_message("w1", "tok"));
  CHECK(j.worker_id == "w1");
  CHECK(j.token == "tok");
  const auto a = parse_client_message(answer_message(5, "LOC"));
  CHECK(a.query_id == 5u);
  CHECK(a.label == "LOC");
}

TEST_CASE("server frames carry v:1 and the documented fields") {
  const auto schema = nlohmann::json::parse(std::ifstream(OTJ_SCHEMA_PATH));
  auto check_fields = [&](const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("v") == kProtocolVersion);
    const auto type = j.at("type").get<std::string>();
    REQUIRE(schema["server_to_client"].contains(type));
    for (const auto& field : schema["server_to_client"][type]["required"]) {
      CHECK_MESSAGE(j.contains(field.get<std::string>()), type << " lacks " << field);
    }
  };
  PendingQuery q;
  q.id = 3;
  q.episode = 1;
  q.position = 2;
  q.tokens = {"a", "b", "c"};
  q.labels = {"NONE", "PER"};
  check_fields(task_message(q, 30.0));
  check_fields(welcome_message("w", {"NONE", "PER"}));
  check_fields(cancel_message(3));
  check_fields(ack_message(3, true));
  check_fields(ack_message(3, false, "stale"));
  check_fields(pong_message());
  check_fields(error_message("bad"));

  const auto task = nlohmann::json::parse(task_message(q, 30.0));
  CHECK(task["highlight_index"] == 2);
  CHECK(task["labels"] == nlohmann::json({"NONE", "PER"}));
  CHECK(task["tokens"].size() == 3);

  for (const auto& type : {"join", "answer", "ping", "goodbye"}) CHECK(schema["client_to_server"].contains(type));
  const auto sample = nlohmann::json::parse(answer_message(1, "X"));
  for (const auto& field : schema["client_to_server"]["answer"]["required"]) {
    CHECK(sample.contains(field.get<std::string>()));
  }
}
