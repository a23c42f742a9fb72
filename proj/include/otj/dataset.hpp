#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <ostream>
#include <vector>

#include "otj/crf.hpp"

namespace otj {

struct Example {
  TokenSequence input;
  std::vector<LabelIndex> gold;
};

enum class TaskKind { Sequence, Classification };

struct Dataset {
  std::vector<Example> examples;
  LabelSet labels;
  TaskKind kind = TaskKind::Sequence;

  std::size_t token_count() const;
};

/// Blank-line separated sentences of `token<TAB>label[<TAB>feature...]`
/// lines. Labels are collected in first-seen order. A dataset whose
/// examples all have length one is a classification task.
Dataset parse_sequence_dataset(std::istream& in);
Dataset load_sequence_dataset(const std::filesystem::path& path);

void write_sequence_dataset(std::ostream& out, const Dataset& dataset);

}  // namespace otj
