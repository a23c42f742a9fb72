#include "otj/config.hpp"

#include <charconv>
#include <fstream>

#include "otj/errors.hpp"

namespace otj {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "policy") {
    policy = v;
  } else if (key == "utility.w_m") {
    utility.cost_per_query = to_double(key, v);
  } else if (key == "utility.w_t") {
    utility.cost_per_second = to_double(key, v);
  } else if (key == "env.accuracy") {
    response_accuracy = to_double(key, v);
  } else if (key == "env.mu") {
    latency.mean = to_double(key, v);
  } else if (key == "env.sigma") {
    latency.stddev = to_double(key, v);
  } else if (key == "env.floor") {
    latency.floor = to_double(key, v);
  } else if (key == "env.pool_fallback") {
    pool_fallback = to_bool(key, v);
  } else if (key == "crf.step_size") {
    crf.step_size = to_double(key, v);
  } else if (key == "crf.l2") {
    crf.l2 = to_double(key, v);
  } else if (key == "crf.epsilon") {
    crf.epsilon = to_double(key, v);
  } else if (key == "mcts.budget") {
    planner.mcts.budget = to_uint(key, v);
  } else if (key == "mcts.c") {
    planner.mcts.exploration = to_double(key, v);
  } else if (key == "mcts.max_depth") {
    planner.mcts.max_depth = to_uint(key, v);
  } else if (key == "mcts.widening") {
    planner.mcts.widening = to_bool(key, v);
  } else if (key == "policy.max_queries_per_token") {
    planner.max_queries_per_token = to_uint(key, v);
  } else if (key == "threshold.target") {
    threshold.confidence_target = to_double(key, v);
  } else if (key == "threshold.factor") {
    threshold.uncertainty_factor = to_double(key, v);
  } else if (key == "seed") {
    seed = to_uint(key, v);
  } else if (key == "stream.shuffle") {
    shuffle = to_bool(key, v);
  } else if (key == "stream.seed") {
    stream_seed = to_uint(key, v);
  } else if (key == "output_dir") {
    output_dir = v;
  } else if (key == "metrics.background") {
    background_label = v;
  } else if (key == "metrics.window") {
    window = to_uint(key, v);
  } else if (key == "metrics.query_price") {
    query_price = to_double(key, v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::validate() const {
  try {
    utility.validate();
    latency.validate();
    ResponseModel(response_accuracy, 2);
    threshold.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(crf.step_size > 0.0) || crf.l2 < 0.0) {
    throw ConfigError("crf.step_size must be positive and crf.l2 non-negative");
  }
  if (planner.mcts.budget < 1) throw ConfigError("mcts.budget must be at least 1");
  if (planner.mcts.exploration < 0.0) throw ConfigError("mcts.c must be non-negative");
  if (planner.max_queries_per_token < 1) {
    throw ConfigError("policy.max_queries_per_token must be at least 1");
  }
  if (window < 1) throw ConfigError("metrics.window must be at least 1");
  if (query_price < 0.0) throw ConfigError("metrics.query_price must be non-negative");
  make_policy(policy, planner, threshold);
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  return {
      {"policy", policy},
      {"utility.w_m", fmt(utility.cost_per_query)},
      {"utility.w_t", fmt(utility.cost_per_second)},
      {"env.accuracy", fmt(response_accuracy)},
      {"env.mu", fmt(latency.mean)},
      {"env.sigma", fmt(latency.stddev)},
      {"env.floor", fmt(latency.floor)},
      {"env.pool_fallback", pool_fallback ? "true" : "false"},
      {"crf.step_size", fmt(crf.step_size)},
      {"crf.l2", fmt(crf.l2)},
      {"crf.epsilon", fmt(crf.epsilon)},
      {"mcts.budget", std::to_string(planner.mcts.budget)},
      {"mcts.c", fmt(planner.mcts.exploration)},
      {"mcts.max_depth", std::to_string(planner.mcts.max_depth)},
      {"mcts.widening", planner.mcts.widening ? "true" : "false"},
      {"policy.max_queries_per_token", std::to_string(planner.max_queries_per_token)},
      {"threshold.target", fmt(threshold.confidence_target)},
      {"threshold.factor", fmt(threshold.uncertainty_factor)},
      {"seed", std::to_string(seed)},
      {"stream.shuffle", shuffle ? "true" : "false"},
      {"stream.seed", std::to_string(stream_seed)},
      {"output_dir", output_dir.string()},
      {"metrics.background", background_label},
      {"metrics.window", std::to_string(window)},
      {"metrics.query_price", fmt(query_price)},
  };
}

}  // namespace otj
