#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ptune/model.hpp"
#include "ptune/prompt.hpp"
#include "ptune/task.hpp"
#include "ptune/trainer.hpp"

namespace ptune {

// N prompt checkpoints tuned against one frozen model, in member order.
struct EnsembleSpec {
  std::vector<PromptCheckpoint> members;

  std::size_t size() const { return members.size(); }
  // Throws InputError when empty, IdentityError when a member is bound to
  // another model.
  void validate(const FrozenModel& model) const;
};

// One batched pass over the example replicated N times, row i carrying
// member i's prompt.
std::vector<Prediction> replicated_forward(const FrozenModel& model, const EnsembleSpec& spec,
                                           const Text2TextExample& example, const Task& task,
                                           std::size_t max_decode_len = 16);

// Teacher-forced logits of every member for one example, one batched pass.
std::vector<Tensor> replicated_logits(const FrozenModel& model, const EnsembleSpec& spec,
                                      std::span<const TokenId> input, std::span<const TokenId> target);

// Most frequent prediction. Ties go to the earliest entry of `canonical`;
// predictions absent from it rank after it in lexicographic order.
std::string majority_vote(std::span<const std::string> predictions, std::span<const std::string> canonical = {});

struct MetricSummary {
  std::vector<double> members;
  double average = 0.0;
  double best = 0.0;
  double ensemble = 0.0;
};

struct EnsembleReport {
  std::map<std::string, MetricSummary> metrics;  // keyed by metric name
};

EnsembleReport ensemble_evaluate(const FrozenModel& model, const EnsembleSpec& spec,
                                 std::span<const Text2TextExample> examples, const Task& task,
                                 std::size_t max_decode_len = 16);

std::string ensemble_report_csv(const EnsembleReport& report);
std::string ensemble_report_json(const EnsembleReport& report);

// Member checkpoint paths, one per line; blank lines and '#' comments are
// skipped and relative paths resolve against the manifest's directory.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path);
EnsembleSpec load_ensemble(const std::filesystem::path& manifest, const FrozenModel& model);

}  // namespace ptune
