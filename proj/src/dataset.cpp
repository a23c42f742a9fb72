#include "otj/dataset.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>

#include "otj/errors.hpp"

namespace otj {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

double parse_double(const std::string& text, std::size_t line_no) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw ParseError("bad feature value '" + text + "'", line_no);
  }
  return v;
}

}  // namespace

std::size_t Dataset::token_count() const {
  std::size_t total = 0;
  for (const auto& ex : examples) total += ex.input.size();
  return total;
}

Dataset parse_sequence_dataset(std::istream& in) {
  struct Pending {
    TokenSequence input;
    std::vector<std::string> labels;
  };
  std::vector<Pending> sentences;
  std::vector<std::string> label_order;
  std::unordered_map<std::string, LabelIndex> seen;
  Pending current;
  std::size_t dense_dim = 0;
  bool dense_known = false;

  auto flush = [&] {
    if (current.input.size() == 0) return;
    sentences.push_back(std::move(current));
    current = Pending{};
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    auto fields = split_tabs(line);
    if (fields.size() < 2) throw ParseError("expected token<TAB>label", line_no);
    if (fields[0].empty() || fields[1].empty()) {
      throw ParseError("empty token or label", line_no);
    }
    const std::size_t dim = fields.size() - 2;
    if (!dense_known) {
      dense_dim = dim;
      dense_known = true;
    } else if (dim != dense_dim) {
      throw ParseError("inconsistent feature vector width", line_no);
    }
    current.input.tokens.push_back(fields[0]);
    if (dim > 0) {
      std::vector<double> vec;
      vec.reserve(dim);
      for (std::size_t j = 2; j < fields.size(); ++j) vec.push_back(parse_double(fields[j], line_no));
      current.input.dense.push_back(std::move(vec));
    }
    if (seen.emplace(fields[1], label_order.size()).second) label_order.push_back(fields[1]);
    current.labels.push_back(fields[1]);
  }
  flush();

  if (sentences.empty()) throw ParseError("no examples", 0);
  if (label_order.size() < 2) throw ParseError("dataset declares fewer than two labels", 0);

  Dataset ds;
  ds.labels = LabelSet(label_order);
  bool all_single = true;
  for (auto& s : sentences) {
    Example ex;
    ex.input = std::move(s.input);
    for (const auto& l : s.labels) ex.gold.push_back(seen.at(l));
    all_single = all_single && ex.input.size() == 1;
    ds.examples.push_back(std::move(ex));
  }
  ds.kind = all_single ? TaskKind::Classification : TaskKind::Sequence;
  return ds;
}

Dataset load_sequence_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file " + path.string(), 0);
  return parse_sequence_dataset(in);
}

void write_sequence_dataset(std::ostream& out, const Dataset& dataset) {
  bool first = true;
  for (const auto& ex : dataset.examples) {
    if (!first) out << '\n';
    first = false;
    for (std::size_t i = 0; i < ex.input.size(); ++i) {
      out << ex.input.tokens[i] << '\t' << dataset.labels.name(ex.gold[i]);
      if (!ex.input.dense.empty()) {
        for (double v : ex.input.dense[i]) {
          std::ostringstream num;
          num.precision(17);
          num << v;
          out << '\t' << num.str();
        }
      }
      out << '\n';
    }
  }
}

}  // namespace otj
