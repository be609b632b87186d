#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ptune/objectives.hpp"
#include "ptune/vocab.hpp"

namespace ptune {

enum class TaskKind { kClassification, kGeneration };

// Sidecar describing a task. Text form, one `key = value` per line:
//   name = toy
//   kind = classification
//   labels = positive, negative
//   metrics = accuracy
//   seed_words = commonsense, pronoun, resolution
struct TaskMetadata {
  std::string name;
  TaskKind kind = TaskKind::kClassification;
  std::vector<std::string> labels;      // canonical order
  std::vector<std::string> metrics;     // subset of {accuracy, exact_match}
  std::vector<std::string> seed_words;  // class-label init words for generation tasks

  void validate() const;  // throws ConfigError
  // Words used to seed class-label prompt rows.
  const std::vector<std::string>& init_words() const { return kind == TaskKind::kClassification ? labels : seed_words; }

  static TaskMetadata parse(std::string_view text);
  static TaskMetadata read(const std::filesystem::path& path);
  std::string render() const;
};

inline constexpr std::string_view kAccuracy = "accuracy";
inline constexpr std::string_view kExactMatch = "exact_match";

struct TextPair {
  std::string input;
  std::string target;
};

// One `input<TAB>target` pair per non-blank line.
std::vector<TextPair> parse_tsv(std::string_view text);
std::vector<TextPair> read_tsv(const std::filesystem::path& path);
void write_tsv(const std::filesystem::path& path, std::span<const TextPair> pairs);

// A task bound to a vocabulary: candidate targets are the encoded labels.
struct Task {
  TaskMetadata meta;
  std::vector<std::vector<TokenId>> candidates;  // one per label, in label order
  bool sentinel_target = false;                  // targets carry a leading sentinel

  // Index of the candidate equal to `target`, or npos.
  std::size_t label_of(std::span<const TokenId> target) const;
};

Task make_task(TaskMetadata meta, const Vocabulary& vocab, bool sentinel_target = false);

// Encodes pairs as the model sees them. Classification targets must name a
// declared label (LabelError otherwise).
std::vector<Text2TextExample> encode_examples(std::span<const TextPair> pairs, const Task& task,
                                              const Vocabulary& vocab);

// Trims and splits a comma-separated list, dropping empty items.
std::vector<std::string> split_list(std::string_view text);
std::string trim(std::string_view text);

}  // namespace ptune
