#include "otj/run.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "otj/errors.hpp"

namespace otj {

std::optional<std::string> background_for(const Dataset& dataset, const RunConfig& config) {
  if (config.background_label.empty() || !dataset.labels.index_of(config.background_label)) {
    return std::nullopt;
  }
  return config.background_label;
}

void check_pool_matches(const FrozenPool& pool, const Dataset& dataset) {
  for (const auto& [key, records] : pool.records()) {
    const auto [example_id, position] = key;
    if (example_id >= dataset.examples.size()) {
      throw PoolMismatch("pool refers to example " + std::to_string(example_id) + " but the dataset has " +
                         std::to_string(dataset.examples.size()) + " examples");
    }
    const std::size_t n = dataset.examples[example_id].input.size();
    if (position >= n) {
      throw PoolMismatch("pool refers to position " + std::to_string(position) + " of example " +
                         std::to_string(example_id) + ", which has " + std::to_string(n) + " tokens");
    }
  }
}

RunResult execute_run(const Dataset& dataset, const RunConfig& config, FrozenPool* pool) {
  config.validate();
  if (pool) check_pool_matches(*pool, dataset);
  const auto& dir = config.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());

  {
    std::ofstream cfg(dir / "config.txt");
    if (!cfg) throw std::runtime_error("cannot write " + (dir / "config.txt").string());
    // The directory itself is left out so runs written to different places
    // stay byte-identical.
    for (const auto& [k, v] : config.entries()) {
      if (k != "output_dir") cfg << k << " = " << v << '\n';
    }
  }

  const auto trajectory_path = dir / "trajectory.jsonl";
  std::ofstream trajectory(trajectory_path);
  if (!trajectory) throw std::runtime_error("cannot write " + trajectory_path.string());
  TrajectoryWriter writer(trajectory);

  const auto mode = pool ? CrowdMode::Frozen : CrowdMode::Generative;
  SimulatedCrowd crowd(make_environment(config, dataset.labels.size(), mode),
                       derive_seed(config.seed, 2), pool);
  StreamRunner runner(dataset, config, crowd, &writer);

  RunResult out;
  out.records = runner.run();
  trajectory.flush();
  if (!trajectory) throw std::runtime_error("failed writing " + trajectory_path.string());
  out.summary = compute_metrics(out.records, dataset.labels, background_for(dataset, config),
                                config.window, config.query_price);
  export_results(out.records, out.summary, dataset.labels, dir);
  return out;
}

}  // namespace otj
