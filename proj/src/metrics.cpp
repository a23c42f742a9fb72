#include "otj/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "otj/errors.hpp"

namespace otj {

namespace {

struct Tally {
  std::vector<std::size_t> tp, fp, fn;
  std::size_t correct = 0, tokens = 0, queries = 0;
  double latency = 0.0;

  explicit Tally(std::size_t k) : tp(k), fp(k), fn(k) {}

  void add(const EpisodeRecord& r) {
    if (r.predicted.size() != r.gold.size()) {
      throw std::invalid_argument("episode prediction and gold lengths differ");
    }
    for (std::size_t i = 0; i < r.gold.size(); ++i) {
      const LabelIndex p = r.predicted[i];
      const LabelIndex g = r.gold[i];
      if (p == g) {
        ++correct;
        ++tp[g];
      } else {
        ++fp[p];
        ++fn[g];
      }
    }
    tokens += r.gold.size();
    queries += r.query_count();
    latency += r.latency;
  }
};

struct F1Result {
  std::vector<ClassScores> classes;
  double micro = 0.0;
  double macro = 0.0;
};

F1Result f1_from(const Tally& t, const LabelSet& labels, std::optional<LabelIndex> background) {
  F1Result out;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (LabelIndex l = 0; l < labels.size(); ++l) {
    if (background && *background == l) continue;
    out.classes.push_back(score_counts(labels.name(l), t.tp[l], t.fp[l], t.fn[l]));
    tp += t.tp[l];
    fp += t.fp[l];
    fn += t.fn[l];
    out.macro += out.classes.back().f1;
  }
  if (!out.classes.empty()) out.macro /= static_cast<double>(out.classes.size());
  out.micro = score_counts("", tp, fp, fn).f1;
  return out;
}

double ratio(double num, std::size_t den) { return den ? num / static_cast<double>(den) : 0.0; }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

void ensure_ok(const std::ofstream& out, const std::filesystem::path& path) {
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

ClassScores score_counts(std::string label, std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScores s;
  s.label = std::move(label);
  s.true_positives = tp;
  s.false_positives = fp;
  s.false_negatives = fn;
  s.precision = ratio(static_cast<double>(tp), tp + fp);
  s.recall = ratio(static_cast<double>(tp), tp + fn);
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

MetricsSummary compute_metrics(std::span<const EpisodeRecord> records, const LabelSet& labels,
                               const std::optional<std::string>& background, std::size_t window,
                               double cost_per_query) {
  if (records.empty()) throw std::invalid_argument("compute_metrics needs at least one episode");
  if (window == 0) throw std::invalid_argument("window must be positive");
  const std::size_t k = labels.size();
  std::optional<LabelIndex> bg;
  if (background) bg = labels.index_of(*background);

  Tally all(k);
  MetricsSummary s;
  double utility_sum = 0.0;
  for (const auto& r : records) {
    all.add(r);
    utility_sum += r.utility;
    if (r.pool_exhausted) ++s.pool_exhausted_episodes;
  }
  const auto f1 = f1_from(all, labels, bg);
  s.classes = f1.classes;
  s.episodes = records.size();
  s.tokens = all.tokens;
  s.queries = all.queries;
  s.accuracy = ratio(static_cast<double>(all.correct), all.tokens);
  s.f1 = f1.micro;
  s.macro_f1 = f1.macro;
  s.qs_per_token = ratio(static_cast<double>(all.queries), all.tokens);
  s.delay_per_token = ratio(all.latency, all.tokens);
  s.cumulative_cost = static_cast<double>(all.queries) * cost_per_query;
  s.mean_utility = utility_sum / static_cast<double>(records.size());

  for (std::size_t start = 0, w = 1; start < records.size(); start += window, ++w) {
    Tally t(k);
    const std::size_t stop = std::min(records.size(), start + window);
    for (std::size_t i = start; i < stop; ++i) t.add(records[i]);
    CurvePoint p;
    p.episode_window = w;
    p.f1 = f1_from(t, labels, bg).micro;
    p.accuracy = ratio(static_cast<double>(t.correct), t.tokens);
    p.qs_per_token = ratio(static_cast<double>(t.queries), t.tokens);
    p.delay_per_token = ratio(t.latency, t.tokens);
    s.curve.push_back(p);
  }
  return s;
}

std::vector<std::pair<std::string, double>> MetricsSummary::flatten() const {
  std::vector<std::pair<std::string, double>> out{
      {"episodes", static_cast<double>(episodes)},
      {"tokens", static_cast<double>(tokens)},
      {"queries", static_cast<double>(queries)},
      {"accuracy", accuracy},
      {"f1", f1},
      {"macro_f1", macro_f1},
      {"qs_per_token", qs_per_token},
      {"delay_per_token", delay_per_token},
      {"cumulative_cost", cumulative_cost},
      {"mean_utility", mean_utility},
      {"pool_exhausted_episodes", static_cast<double>(pool_exhausted_episodes)},
  };
  for (const auto& c : classes) {
    out.emplace_back("precision." + c.label, c.precision);
    out.emplace_back("recall." + c.label, c.recall);
    out.emplace_back("f1." + c.label, c.f1);
  }
  return out;
}

void export_results(std::span<const EpisodeRecord> records, const MetricsSummary& summary,
                    const LabelSet& labels, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());

  const auto episodes_path = dir / "episodes.jsonl";
  std::ofstream episodes(episodes_path);
  if (!episodes) throw std::runtime_error("cannot write " + episodes_path.string());
  for (const auto& r : records) episodes << episode_to_json(r, labels).dump() << '\n';
  ensure_ok(episodes, episodes_path);

  const auto summary_path = dir / "summary.txt";
  std::ofstream sum(summary_path);
  if (!sum) throw std::runtime_error("cannot write " + summary_path.string());
  for (const auto& [key, value] : summary.flatten()) sum << key << '=' << fmt(value) << '\n';
  ensure_ok(sum, summary_path);

  const auto curve_path = dir / "curve.csv";
  std::ofstream curve(curve_path);
  if (!curve) throw std::runtime_error("cannot write " + curve_path.string());
  curve << "episode_window,f1,qs_per_token,delay\n";
  for (const auto& p : summary.curve) {
    curve << p.episode_window << ',' << fmt(p.f1) << ',' << fmt(p.qs_per_token) << ','
          << fmt(p.delay_per_token) << '\n';
  }
  ensure_ok(curve, curve_path);
}

std::vector<EpisodeRecord> load_episodes(const std::filesystem::path& path, const LabelSet& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<EpisodeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line), labels));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed episode record: ") + e.what(), line_no);
    }
  }
  return out;
}

std::string format_summary_table(const MetricsSummary& summary) {
  std::ostringstream out;
  out << std::left << std::setw(28) << "metric" << "value\n";
  for (const auto& [key, value] : summary.flatten()) {
    out << std::left << std::setw(28) << key << fmt(value) << '\n';
  }
  return out.str();
}

}  // namespace otj
