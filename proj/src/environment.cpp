#include "otj/environment.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "otj/errors.hpp"

namespace otj {

namespace {

constexpr int kMaxRejections = 1000;

// Standard normal draw restricted to [lower, inf). Naive rejection when the
// bound sits left of the mode, exponential-proposal rejection (Robert 1995)
// in the right tail.
double truncated_standard_normal(double lower, Rng& rng) {
  if (lower <= 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (;;) {
      const double z = normal(rng);
      if (z >= lower) return z;
    }
  }
  const double alpha = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    const double z = lower - std::log1p(-unit(rng)) / alpha;
    const double accept = std::exp(-0.5 * (z - alpha) * (z - alpha));
    if (unit(rng) <= accept) return z;
  }
}

}  // namespace

ResponseModel::ResponseModel(double accuracy, std::size_t label_count)
    : accuracy_(accuracy), label_count_(label_count) {
  if (!(accuracy > 0.0 && accuracy <= 1.0)) {
    throw std::invalid_argument("response accuracy must lie in (0, 1]");
  }
  if (label_count < 2) throw std::invalid_argument("response model needs at least two labels");
}

void LatencyModel::validate() const {
  if (!(mean > 0.0 && stddev > 0.0 && floor > 0.0)) {
    throw std::invalid_argument("latency mean, stddev and floor must be positive");
  }
}

double response_prob(const ResponseModel& model, LabelIndex response, LabelIndex truth) {
  if (response == truth) return model.accuracy();
  return (1.0 - model.accuracy()) / static_cast<double>(model.label_count() - 1);
}

LabelIndex sample_response(const ResponseModel& model, LabelIndex truth, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < model.accuracy()) return truth;
  std::uniform_int_distribution<LabelIndex> other(0, model.label_count() - 2);
  const LabelIndex pick = other(rng);
  return pick >= truth ? pick + 1 : pick;
}

double sample_latency(const LatencyModel& model, Rng& rng) {
  std::normal_distribution<double> normal(model.mean, model.stddev);
  for (int i = 0; i < kMaxRejections; ++i) {
    const double d = normal(rng);
    if (d >= model.floor) return d;
  }
  return model.floor;
}

double sample_latency_conditional(const LatencyModel& model, double issue_time, double now,
                                  Rng& rng) {
  if (now < issue_time) throw std::invalid_argument("conditioning time precedes issue time");
  const double lower = std::max(model.floor, now - issue_time);
  const double z = truncated_standard_normal((lower - model.mean) / model.stddev, rng);
  const double d = std::max(lower, model.mean + model.stddev * z);
  double arrival = issue_time + d;
  if (arrival <= now) arrival = std::nextafter(now, std::numeric_limits<double>::infinity());
  return arrival;
}

std::vector<double> predictive_from_marginals(std::span<const double> marginal_row,
                                              const ResponseModel& model) {
  const std::size_t k = marginal_row.size();
  std::vector<double> out(k, 0.0);
  for (LabelIndex r = 0; r < k; ++r) {
    for (LabelIndex y = 0; y < k; ++y) out[r] += marginal_row[y] * response_prob(model, r, y);
  }
  return out;
}

std::vector<double> posterior_predictive_response(const CrfModel& model, const TokenSequence& x,
                                                  std::span<const Observation> received,
                                                  std::size_t position,
                                                  const ResponseModel& response_model) {
  if (position >= x.size()) throw std::out_of_range("query position outside the input");
  const auto conditioned =
      condition_on_responses(compute_potentials(model, x), received, response_model);
  const auto marginals = forward_backward(conditioned);
  return predictive_from_marginals(marginals.node.row(position), response_model);
}

std::size_t sample_discrete(std::span<const double> probabilities, Rng& rng) {
  double total = 0.0;
  for (double p : probabilities) total += p;
  std::uniform_real_distribution<double> unit(0.0, total);
  double u = unit(rng);
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (u < probabilities[i]) return i;
    u -= probabilities[i];
  }
  // Rounding can leave u marginally above the last bucket.
  for (std::size_t i = probabilities.size(); i-- > 0;) {
    if (probabilities[i] > 0.0) return i;
  }
  return 0;
}

void FrozenPool::add(std::size_t example_id, std::size_t position, PoolRecord record) {
  if (!(record.delay > 0.0)) throw std::invalid_argument("pool delays must be positive");
  const Key key{example_id, position};
  records_[key].push_back(std::move(record));
  consumed_[key].push_back(false);
}

const PoolRecord* FrozenPool::take(std::size_t example_id, std::size_t position, Rng& rng) {
  const Key key{example_id, position};
  auto it = records_.find(key);
  if (it == records_.end()) return nullptr;
  auto& used = consumed_[key];
  std::vector<std::size_t> open;
  for (std::size_t i = 0; i < used.size(); ++i) {
    if (!used[i]) open.push_back(i);
  }
  if (open.empty()) return nullptr;
  std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
  const std::size_t chosen = open[pick(rng)];
  used[chosen] = true;
  return &it->second[chosen];
}

std::size_t FrozenPool::remaining(std::size_t example_id, std::size_t position) const {
  auto it = consumed_.find({example_id, position});
  if (it == consumed_.end()) return 0;
  std::size_t open = 0;
  for (bool u : it->second) open += u ? 0 : 1;
  return open;
}

std::size_t FrozenPool::depth(std::size_t example_id, std::size_t position) const {
  auto it = records_.find({example_id, position});
  return it == records_.end() ? 0 : it->second.size();
}

void FrozenPool::reset() {
  for (auto& [key, used] : consumed_) used.assign(used.size(), false);
}

FrozenDraw frozen_draw(FrozenPool& pool, std::size_t example_id, std::size_t position, Rng& rng,
                       const PoolFallback* fallback) {
  if (const PoolRecord* rec = pool.take(example_id, position, rng)) {
    return {rec->label, rec->delay, false};
  }
  if (fallback == nullptr) {
    throw PoolExhausted("frozen pool exhausted for example " + std::to_string(example_id) +
                        " position " + std::to_string(position));
  }
  const LabelIndex label = sample_response(*fallback->response, fallback->truth, rng);
  const double delay = sample_latency(*fallback->latency, rng);
  return {label, delay, true};
}

FrozenPool load_frozen_pool(const std::filesystem::path& path, const LabelSet& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pool file: " + path.string());
  FrozenPool pool;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed pool record: ") + e.what(), line_no);
    }
    try {
      const auto label_name = rec.at("label").get<std::string>();
      const auto label = labels.index_of(label_name);
      if (!label) {
        throw PoolMismatch("pool label '" + label_name + "' is not in the dataset label set (line " +
                           std::to_string(line_no) + ")");
      }
      const double delay = rec.at("delay_seconds").get<double>();
      if (!(delay > 0.0)) throw ParseError("delay_seconds must be positive", line_no);
      pool.add(rec.at("example_id").get<std::size_t>(), rec.at("position").get<std::size_t>(),
               PoolRecord{*label, delay, rec.value("worker_id", std::string{})});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("pool record missing or mistyped field: ") + e.what(), line_no);
    }
  }
  return pool;
}

}  // namespace otj
