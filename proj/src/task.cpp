#include "ptune/task.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ptune/error.hpp"

namespace ptune {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return "";
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    std::string item = trim(text.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void TaskMetadata::validate() const {
  if (name.empty()) throw ConfigError("task metadata needs a name");
  if (metrics.empty()) throw ConfigError("task '" + name + "' declares no metrics");
  for (const std::string& m : metrics) {
    if (m != kAccuracy && m != kExactMatch) {
      throw ConfigError("unknown metric '" + m + "' (expected accuracy or exact_match)");
    }
    if (m == kAccuracy && kind != TaskKind::kClassification) {
      throw ConfigError("accuracy needs a classification task");
    }
  }
  if (kind == TaskKind::kClassification && labels.size() < 2) {
    throw ConfigError("classification task '" + name + "' needs at least two labels");
  }
  std::vector<std::string> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("task '" + name + "' lists a label twice");
  }
}

TaskMetadata TaskMetadata::parse(std::string_view text) {
  TaskMetadata meta;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool saw_kind = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("metadata line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key == "name") {
      meta.name = value;
    } else if (key == "kind") {
      if (value == "classification") {
        meta.kind = TaskKind::kClassification;
      } else if (value == "generation") {
        meta.kind = TaskKind::kGeneration;
      } else {
        throw ConfigError("metadata line " + std::to_string(lineno) + ": unknown kind '" + value + "'");
      }
      saw_kind = true;
    } else if (key == "labels") {
      meta.labels = split_list(value);
    } else if (key == "metrics") {
      meta.metrics = split_list(value);
    } else if (key == "seed_words") {
      meta.seed_words = split_list(value);
    } else {
      throw ConfigError("metadata line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (!saw_kind) throw ConfigError("task metadata needs a kind");
  meta.validate();
  return meta;
}

TaskMetadata TaskMetadata::read(const std::filesystem::path& path) { return parse(read_text(path)); }

std::string TaskMetadata::render() const {
  std::string out = "name = " + name + "\n";
  out += std::string("kind = ") + (kind == TaskKind::kClassification ? "classification" : "generation") + "\n";
  if (!labels.empty()) out += "labels = " + join(labels) + "\n";
  out += "metrics = " + join(metrics) + "\n";
  if (!seed_words.empty()) out += "seed_words = " + join(seed_words) + "\n";
  return out;
}

std::vector<TextPair> parse_tsv(std::string_view text) {
  std::vector<TextPair> pairs;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw InputError("TSV line " + std::to_string(lineno) + ": expected input<TAB>target");
    }
    pairs.push_back({trim(line.substr(0, tab)), trim(line.substr(tab + 1))});
  }
  return pairs;
}

std::vector<TextPair> read_tsv(const std::filesystem::path& path) { return parse_tsv(read_text(path)); }

void write_tsv(const std::filesystem::path& path, std::span<const TextPair> pairs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const TextPair& p : pairs) out << p.input << '\t' << p.target << '\n';
}

std::size_t Task::label_of(std::span<const TokenId> target) const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (std::equal(candidates[i].begin(), candidates[i].end(), target.begin(), target.end())) return i;
  }
  return static_cast<std::size_t>(-1);
}

Task make_task(TaskMetadata meta, const Vocabulary& vocab, bool sentinel_target) {
  meta.validate();
  Task task;
  task.sentinel_target = sentinel_target;
  for (const std::string& label : meta.labels) {
    Text2TextExample ex = cast_classification(label, label, vocab);
    if (sentinel_target) ex = add_sentinel_prefix(std::move(ex), vocab);
    task.candidates.push_back(std::move(ex.target));
  }
  task.meta = std::move(meta);
  return task;
}

std::vector<Text2TextExample> encode_examples(std::span<const TextPair> pairs, const Task& task,
                                              const Vocabulary& vocab) {
  std::vector<Text2TextExample> out;
  for (const TextPair& p : pairs) {
    Text2TextExample ex;
    if (task.meta.kind == TaskKind::kClassification) {
      if (std::find(task.meta.labels.begin(), task.meta.labels.end(), p.target) == task.meta.labels.end()) {
        throw LabelError("target '" + p.target + "' is not a declared label of task '" + task.meta.name + "'");
      }
      ex = cast_classification(p.input, p.target, vocab);
    } else {
      ex.input = vocab.encode(p.input);
      if (ex.input.empty()) throw InputError("empty input in task '" + task.meta.name + "'");
      ex.target = vocab.encode(p.target);
      ensure_eos(ex);
    }
    if (task.sentinel_target) ex = add_sentinel_prefix(std::move(ex), vocab);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace ptune
