// Command-line entry point: simulate, replay, serve, report.

#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "otj/config.hpp"
#include "otj/dataset.hpp"
#include "otj/environment.hpp"
#include "otj/errors.hpp"
#include "otj/metrics.hpp"
#include "otj/run.hpp"
#include "otj/server.hpp"

#ifndef OTJ_VERSION
#define OTJ_VERSION "0.0.0"
#endif

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kPoolMismatch = 4,
  kBindFailure = 5,
};

/// Thrown for a command-line problem that maps to a specific exit code.
struct UsageError {
  int code;
  std::string message;
};

struct RunFlags {
  std::string data;
  std::string config;
  std::string policy;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_run_flags(CLI::App& cmd, RunFlags& f) {
  cmd.add_option("--data", f.data, "Labelled sequence dataset (token<TAB>label lines, blank line between examples)");
  cmd.add_option("--config", f.config, "key = value run config; defaults to $OTJ_CONFIG when set");
  cmd.add_option("--policy", f.policy, "lense | threshold | online | nvote:<n>");
  cmd.add_option("--seed", f.seed, "Master seed");
  cmd.add_option("--out", f.out, "Output directory for exports");
  cmd.add_option("--set", f.overrides, "Override one config key (key=value); repeatable")->take_all();
}

otj::RunConfig build_config(const RunFlags& f) {
  otj::RunConfig config;
  std::string path = f.config;
  if (path.empty()) {
    if (const char* env = std::getenv("OTJ_CONFIG"); env && *env) path = env;
  }
  if (!path.empty()) config.apply_file(path);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw otj::ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!f.policy.empty()) config.set("policy", f.policy);
  if (f.seed) config.seed = *f.seed;
  if (!f.out.empty()) config.output_dir = f.out;
  config.validate();
  return config;
}

otj::Dataset load_data(const std::string& path) {
  if (path.empty()) throw UsageError{kDataError, "missing required flag --data"};
  return otj::load_sequence_dataset(path);
}

int run_simulate(const RunFlags& f) {
  const auto dataset = load_data(f.data);
  const auto config = build_config(f);
  const auto result = otj::execute_run(dataset, config);
  std::cout << otj::format_summary_table(result.summary);
  return kOk;
}

int run_replay(const RunFlags& f, const std::string& pool_path, bool fallback) {
  const auto dataset = load_data(f.data);
  auto config = build_config(f);
  if (fallback) config.pool_fallback = true;
  if (pool_path.empty()) throw UsageError{kDataError, "missing required flag --pool"};
  auto pool = otj::load_frozen_pool(pool_path, dataset.labels);
  const auto result = otj::execute_run(dataset, config, &pool);
  std::cout << otj::format_summary_table(result.summary);
  return kOk;
}

struct ServeFlags {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;
  std::string token;
  double deadline = 30.0;
  bool autostart = false;
};

int run_serve(const RunFlags& f, const ServeFlags& s) {
  const auto dataset = load_data(f.data);
  const auto config = build_config(f);
  if (s.token.empty()) throw otj::ConfigError("--token must not be empty");
  otj::ServerConfig server;
  server.host = s.host;
  server.port = s.port;
  server.token = s.token;
  server.broker.deadline = s.deadline;
  server.broker.query_price = config.query_price;

  otj::LiveServer live(dataset, config, server);
  const auto port = live.start();
  std::cout << "listening on " << s.host << ':' << port << " (workers: ws://" << s.host << ':' << port
            << "/ws)" << std::endl;
  if (s.autostart) live.start_stream();

  boost::asio::io_context signals_io;
  boost::asio::signal_set signals(signals_io, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int sig) {
    std::cerr << "received signal " << sig << ", shutting down" << std::endl;
  });
  signals_io.run();

  live.shutdown();
  std::cout << "stream " << otj::to_string(live.stream_state()) << "; exports in " << config.output_dir.string()
            << std::endl;
  return kOk;
}

int run_report(const std::string& episodes, const std::string& data, std::size_t window,
               const std::string& background, double query_price) {
  if (episodes.empty()) throw UsageError{kDataError, "missing required flag --episodes"};
  const auto dataset = load_data(data);
  const auto records = otj::load_episodes(episodes, dataset.labels);
  std::optional<std::string> bg;
  if (!background.empty() && dataset.labels.index_of(background)) bg = background;
  const auto summary = otj::compute_metrics(records, dataset.labels, bg, window, query_price);
  std::cout << otj::format_summary_table(summary);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"On-the-job learning engine: a CRF tagger that buys crowd labels when it is unsure."};
  app.set_version_flag("--version", std::string("otj ") + OTJ_VERSION);
  app.require_subcommand(1);

  RunFlags sim_flags;
  auto* simulate = app.add_subcommand("simulate", "Run the stream against a simulated crowd");
  add_run_flags(*simulate, sim_flags);

  RunFlags replay_flags;
  std::string pool_path;
  bool fallback = false;
  auto* replay = app.add_subcommand("replay", "Run the stream against a frozen pool of recorded answers");
  add_run_flags(*replay, replay_flags);
  replay->add_option("--pool", pool_path, "JSON-lines pool {example_id, position, label, delay_seconds, worker_id}");
  replay->add_flag("--fallback", fallback, "Sample generatively when the pool runs dry (episode is flagged)");

  RunFlags serve_flags;
  ServeFlags serve_opts;
  auto* serve = app.add_subcommand("serve", "Serve live workers over WebSocket plus the operator endpoints");
  add_run_flags(*serve, serve_flags);
  serve->add_option("--host", serve_opts.host, "Address to bind")->capture_default_str();
  serve->add_option("--port", serve_opts.port, "Port to bind (0 picks a free one)")->capture_default_str();
  serve->add_option("--token", serve_opts.token, "Shared secret for workers and operators")->required();
  serve->add_option("--deadline", serve_opts.deadline, "Seconds before an unanswered task is reassigned")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  serve->add_flag("--autostart", serve_opts.autostart, "Start the stream immediately instead of waiting for POST /stream/start");

  std::string report_episodes;
  std::string report_data;
  std::size_t report_window = 50;
  std::string report_background = "NONE";
  double report_price = 0.01;
  auto* report = app.add_subcommand("report", "Recompute the summary table from an episodes.jsonl file");
  report->add_option("--episodes", report_episodes, "episodes.jsonl written by simulate, replay or serve");
  report->add_option("--data", report_data, "Dataset the episodes came from (for the label set)");
  report->add_option("--window", report_window, "Learning-curve window in episodes")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  report->add_option("--background", report_background, "Label excluded from micro F1")->capture_default_str();
  report->add_option("--query-price", report_price, "Dollars per answered query")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*simulate) return run_simulate(sim_flags);
    if (*replay) return run_replay(replay_flags, pool_path, fallback);
    if (*serve) return run_serve(serve_flags, serve_opts);
    if (*report) return run_report(report_episodes, report_data, report_window, report_background, report_price);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.message << '\n';
    return e.code;
  } catch (const otj::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const otj::PoolMismatch& e) {
    std::cerr << "pool mismatch: " << e.what() << '\n';
    return kPoolMismatch;
  } catch (const otj::ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const otj::BindError& e) {
    std::cerr << "bind failed: " << e.what() << '\n';
    return kBindFailure;
  } catch (const otj::PoolExhausted& e) {
    std::cerr << "pool exhausted: " << e.what() << " (use --fallback to sample instead)\n";
    return kPoolMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
