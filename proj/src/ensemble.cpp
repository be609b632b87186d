#include "ptune/ensemble.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ptune/error.hpp"

namespace ptune {

void EnsembleSpec::validate(const FrozenModel& model) const {
  if (members.empty()) throw InputError("an ensemble needs at least one member");
  for (const PromptCheckpoint& m : members) require_same_model(m, model);
}

namespace {

std::vector<const Tensor*> member_prompts(const EnsembleSpec& spec) {
  std::vector<const Tensor*> prompts;
  for (const PromptCheckpoint& m : spec.members) prompts.push_back(&m.prompt.matrix);
  return prompts;
}

std::string tokens_key(std::span<const TokenId> ids) {
  std::string key;
  for (std::size_t i = 0; i < ids.size(); ++i) key += (i ? " " : "") + std::to_string(ids[i]);
  return key;
}

// Vote key of a prediction under one metric.
std::string vote_key(const Prediction& p, const Task& task, const std::string& metric) {
  if (metric == kAccuracy) return p.label < task.meta.labels.size() ? task.meta.labels[p.label] : std::string();
  return tokens_key(p.tokens);
}

std::string gold_key(const Text2TextExample& ex, const Task& task, const std::string& metric) {
  if (metric == kAccuracy) {
    const std::size_t label = task.label_of(ex.target);
    return label < task.meta.labels.size() ? task.meta.labels[label] : std::string();
  }
  return tokens_key(ex.target);
}

}  // namespace

std::vector<Prediction> replicated_forward(const FrozenModel& model, const EnsembleSpec& spec,
                                           const Text2TextExample& example, const Task& task,
                                           std::size_t max_decode_len) {
  spec.validate(model);
  const auto prompts = member_prompts(spec);
  return predict_batch(model.params(), prompts, example, task, max_decode_len);
}

std::vector<Tensor> replicated_logits(const FrozenModel& model, const EnsembleSpec& spec,
                                      std::span<const TokenId> input, std::span<const TokenId> target) {
  spec.validate(model);
  if (target.empty()) throw InputError("empty target");
  Tape tape;
  std::vector<EncoderItem> enc;
  for (const PromptCheckpoint& m : spec.members) enc.push_back({tape.param(m.prompt.matrix), input});
  const EncodedBatch encoded = encode_batch(tape, model.params(), enc);
  const std::vector<TokenId> shifted = shift_right(target);
  std::vector<DecoderItem> dec;
  for (std::size_t i = 0; i < spec.size(); ++i) dec.push_back({i, shifted});
  const Tensor& stacked = decode_batch(tape, model.params(), encoded, dec).value();
  std::vector<Tensor> out;
  const std::size_t t = target.size();
  for (std::size_t i = 0; i < spec.size(); ++i) {
    Tensor logits = Tensor::matrix(t, stacked.cols());
    for (std::size_t r = 0; r < t; ++r) {
      const auto src = stacked.row(i * t + r);
      std::copy(src.begin(), src.end(), logits.row(r).begin());
    }
    out.push_back(std::move(logits));
  }
  return out;
}

std::string majority_vote(std::span<const std::string> predictions, std::span<const std::string> canonical) {
  if (predictions.empty()) throw InputError("majority vote over no predictions");
  std::map<std::string, std::size_t> counts;
  for (const std::string& p : predictions) ++counts[p];
  auto rank = [&](const std::string& label) {
    const auto it = std::find(canonical.begin(), canonical.end(), label);
    return static_cast<std::size_t>(it - canonical.begin());
  };
  const std::string* winner = nullptr;
  std::size_t best = 0;
  // Map order is lexicographic, so non-canonical ties keep the smallest key.
  for (const auto& [label, count] : counts) {
    if (winner == nullptr || count > best || (count == best && rank(label) < rank(*winner))) {
      winner = &label;
      best = count;
    }
  }
  return *winner;
}

EnsembleReport ensemble_evaluate(const FrozenModel& model, const EnsembleSpec& spec,
                                 std::span<const Text2TextExample> examples, const Task& task,
                                 std::size_t max_decode_len) {
  spec.validate(model);
  if (examples.empty()) throw InputError("cannot evaluate on an empty set");
  const std::size_t n = spec.size();
  EnsembleReport report;
  for (const std::string& m : task.meta.metrics) report.metrics[m].members.assign(n, 0.0);
  for (const Text2TextExample& ex : examples) {
    const auto preds = replicated_forward(model, spec, ex, task, max_decode_len);
    for (const std::string& m : task.meta.metrics) {
      MetricSummary& s = report.metrics[m];
      std::vector<std::string> votes;
      for (std::size_t i = 0; i < n; ++i) {
        s.members[i] += score_prediction(preds[i], ex, task, m);
        votes.push_back(vote_key(preds[i], task, m));
      }
      const std::string winner = majority_vote(votes, task.meta.labels);
      if (winner == gold_key(ex, task, m)) s.ensemble += 1.0;
    }
  }
  const double count = static_cast<double>(examples.size());
  for (auto& [name, s] : report.metrics) {
    double sum = 0.0;
    for (double& v : s.members) {
      v /= count;
      sum += v;
    }
    s.average = sum / static_cast<double>(n);
    s.best = *std::max_element(s.members.begin(), s.members.end());
    s.ensemble /= count;
  }
  return report;
}

std::string ensemble_report_csv(const EnsembleReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "metric,average,best,ensemble\n";
  for (const auto& [name, s] : report.metrics) {
    out << name << ',' << s.average << ',' << s.best << ',' << s.ensemble << '\n';
  }
  return out.str();
}

std::string ensemble_report_json(const EnsembleReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, s] : report.metrics) {
    j[name] = {{"members", s.members}, {"average", s.average}, {"best", s.best}, {"ensemble", s.ensemble}};
  }
  return j.dump(2);
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read manifest " + path.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::filesystem::path p(t);
    if (p.is_relative()) p = path.parent_path() / p;
    out.push_back(std::move(p));
  }
  if (out.empty()) throw InputError("manifest " + path.string() + " lists no members");
  return out;
}

EnsembleSpec load_ensemble(const std::filesystem::path& manifest, const FrozenModel& model) {
  EnsembleSpec spec;
  for (const auto& p : read_manifest(manifest)) spec.members.push_back(load_prompt(p, model));
  spec.validate(model);
  return spec;
}

}  // namespace ptune
