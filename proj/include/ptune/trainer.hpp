#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ptune/autodiff.hpp"
#include "ptune/model.hpp"
#include "ptune/objectives.hpp"
#include "ptune/prompt.hpp"
#include "ptune/task.hpp"
#include "ptune/tensor.hpp"
#include "ptune/vocab.hpp"

namespace ptune {

// ---- Adafactor ----

struct AdafactorConfig {
  double learning_rate = 0.3;
  double decay_exponent = 0.8;  // beta2_hat(t) = 1 - t^-decay_exponent
  double clip_threshold = 1.0;
  double epsilon1 = 1e-30;
  double epsilon2 = 1e-3;  // only read when parameter_scaling is on
  double weight_decay = 1e-5;
  bool parameter_scaling = false;
};

struct AdafactorSlot {
  bool factored = false;
  Tensor row;   // factored: per-row accumulator
  Tensor col;   // factored: per-column accumulator
  Tensor full;  // unfactored accumulator
};

// Factored second moments for matrices with both sides > 1, a full
// accumulator otherwise. No first moment.
class Adafactor {
 public:
  explicit Adafactor(AdafactorConfig config = {});

  // Advances the step counter once and updates every param that has a
  // gradient in `grads`. Params must be trainable.
  void step(std::span<Tensor* const> params, const GradientRecord& grads);
  void step(Tensor& param, const Tensor& grad);

  std::uint64_t steps() const { return t_; }
  const AdafactorConfig& config() const { return config_; }
  const AdafactorSlot* slot(const Tensor& param) const;
  // Largest RMS of a clipped update in the last step.
  double last_update_rms() const { return last_rms_; }

 private:
  void update(Tensor& param, const Tensor& grad, double beta2);

  AdafactorConfig config_;
  std::uint64_t t_ = 0;
  std::map<const Tensor*, AdafactorSlot> slots_;
  double last_rms_ = 0.0;
};

// ---- pre-training ----

struct PretrainConfig {
  std::uint64_t span_steps = 0;
  std::uint64_t lm_steps = 0;
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  bool parameter_scaling = true;  // step size relative to each tensor's RMS
  std::uint64_t seed = 0;
  SpanCorruptionConfig span;
  std::size_t max_length = 64;  // documents are cropped to this many tokens
};

struct PretrainReport {
  std::vector<double> span_losses;
  std::vector<double> lm_losses;
};

// Trains every tensor of `params` (span corruption first, then LM
// adaptation) and adds the step counts to its recipe.
PretrainReport pretrain(ModelParams& params, const Vocabulary& vocab, const Corpus& corpus, const PretrainConfig& cfg,
                        std::ostream* log = nullptr);

// Fraction of greedy decodes whose first token is a sentinel.
double sentinel_initial_rate(const ModelParams& params, const Vocabulary& vocab,
                             std::span<const std::vector<TokenId>> inputs, std::size_t max_len = 4);

// ---- evaluation ----

struct Prediction {
  std::size_t label = static_cast<std::size_t>(-1);  // classification: argmax candidate
  std::vector<double> scores;                        // classification: candidate log-likelihoods
  std::vector<TokenId> tokens;                       // greedy decode when exact_match is scored
};

// One batched pass per example over all `prompts` (null entries mean no
// prompt). Row i of the result belongs to prompt i.
std::vector<Prediction> predict_batch(const ModelParams& params, std::span<const Tensor* const> prompts,
                                      const Text2TextExample& example, const Task& task, std::size_t max_decode_len);

struct EvalResult {
  std::map<std::string, double> metrics;
  double stop_metric = 0.0;  // unweighted mean of the task's metrics
  double loss = 0.0;         // mean per-token cross-entropy of the gold targets
};

// Metric value of one prediction for one example.
double score_prediction(const Prediction& p, const Text2TextExample& example, const Task& task,
                        const std::string& metric);

EvalResult evaluate(const ModelParams& params, const Tensor* prompt, std::span<const Text2TextExample> examples,
                    const Task& task, std::size_t max_decode_len = 16);

// ---- prompt tuning ----

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 0.3;
  std::size_t eval_every = 100;
  std::string metric;  // early-stop metric; empty selects the task's stopping metric
  std::uint64_t seed = 0;
  std::optional<double> target_metric;  // stop once the selection metric reaches it
  std::size_t max_decode_len = 16;
  AdafactorConfig adafactor;  // learning_rate above overrides adafactor.learning_rate

  void validate() const;  // throws ConfigError
};

struct EvalRecord {
  std::size_t step = 0;
  EvalResult result;
  double selection = 0.0;   // value compared for early stopping
  double train_loss = 0.0;  // mean batch loss since the previous evaluation
};

struct TuneResult {
  PromptCheckpoint best;
  PromptCheckpoint last;  // state after the final update
  std::size_t best_step = 0;
  double best_metric = 0.0;
  std::vector<EvalRecord> history;
  std::size_t steps_run = 0;
  double max_update_rms = 0.0;
};

// Trains only the prompt. Evaluates at step 0, every eval_every steps and at
// the end; keeps the first checkpoint with the highest selection metric.
// Writes one JSON object per evaluation to `metrics_log` when given.
TuneResult tune_prompt(const FrozenModel& model, PromptCheckpoint prompt, std::span<const Text2TextExample> train,
                       std::span<const Text2TextExample> dev, const Task& task, const TrainConfig& cfg,
                       std::ostream* metrics_log = nullptr);

std::string metrics_json_line(const EvalRecord& record);

}  // namespace ptune
