// Writes a synthetic sequence-labelling dataset, and optionally a frozen
// answer pool for it drawn from the simulated crowd.

#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "otj/environment.hpp"
#include "otj/synthetic.hpp"

int main(int argc, char** argv) {
  otj::SyntheticConfig cfg;
  std::string out;
  std::string pool_out;
  std::size_t pool_depth = 5;
  double accuracy = 0.7;
  otj::LatencyModel latency;

  CLI::App app{"Generate a synthetic tagging task from a planted chain CRF"};
  app.set_version_flag("--version", "otj_synth 1");
  app.add_option("--out", out, "Dataset file to write")->required();
  app.add_option("--examples", cfg.examples, "Number of examples")->capture_default_str();
  app.add_option("--length", cfg.length, "Tokens per example")->capture_default_str();
  app.add_option("--noise-rate", cfg.noise_rate, "Share of tokens drawn from the noise vocabulary")
      ->capture_default_str();
  app.add_option("--emission-weight", cfg.emission_weight, "Planted word-to-label weight")->capture_default_str();
  app.add_option("--transition-scale", cfg.transition_scale, "Scale of planted transitions")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
  app.add_option("--pool", pool_out, "Also write a frozen answer pool (JSON lines) here");
  app.add_option("--pool-depth", pool_depth, "Answers per (example, position)")->capture_default_str();
  app.add_option("--accuracy", accuracy, "Simulated worker accuracy for the pool")->capture_default_str();
  app.add_option("--mu", latency.mean, "Mean answer delay in seconds for the pool")->capture_default_str();
  app.add_option("--sigma", latency.stddev, "Delay standard deviation for the pool")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    cfg.validate();
    const auto dataset = otj::generate_synthetic(cfg);
    std::ofstream file(out);
    if (!file) throw std::runtime_error("cannot write " + out);
    otj::write_sequence_dataset(file, dataset);

    if (!pool_out.empty()) {
      latency.validate();
      const otj::ResponseModel response(accuracy, dataset.labels.size());
      otj::Rng rng(cfg.seed ^ 0x706f6f6cULL);
      std::ofstream pool(pool_out);
      if (!pool) throw std::runtime_error("cannot write " + pool_out);
      for (std::size_t e = 0; e < dataset.examples.size(); ++e) {
        const auto& ex = dataset.examples[e];
        for (std::size_t i = 0; i < ex.gold.size(); ++i) {
          for (std::size_t d = 0; d < pool_depth; ++d) {
            const auto label = otj::sample_response(response, ex.gold[i], rng);
            nlohmann::ordered_json j;
            j["example_id"] = e;
            j["position"] = i;
            j["label"] = dataset.labels.name(label);
            j["delay_seconds"] = otj::sample_latency(latency, rng);
            j["worker_id"] = "sim-" + std::to_string(d);
            pool << j.dump() << '\n';
          }
        }
      }
    }
    std::cerr << "wrote " << dataset.examples.size() << " examples to " << out << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
