#include "ptune/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"
#include "ptune/error.hpp"

namespace ptune {

Adafactor::Adafactor(AdafactorConfig config) : config_(config) {}

const AdafactorSlot* Adafactor::slot(const Tensor& param) const {
  auto it = slots_.find(&param);
  return it == slots_.end() ? nullptr : &it->second;
}

void Adafactor::step(std::span<Tensor* const> params, const GradientRecord& grads) {
  ++t_;
  const double beta2 = 1.0 - std::pow(static_cast<double>(t_), -config_.decay_exponent);
  last_rms_ = 0.0;
  for (Tensor* p : params) {
    if (const Tensor* g = grads.find(*p)) update(*p, *g, beta2);
  }
}

void Adafactor::step(Tensor& param, const Tensor& grad) {
  ++t_;
  const double beta2 = 1.0 - std::pow(static_cast<double>(t_), -config_.decay_exponent);
  last_rms_ = 0.0;
  update(param, grad, beta2);
}

void Adafactor::update(Tensor& param, const Tensor& grad, double beta2) {
  if (!param.trainable()) throw InputError("optimizer asked to update a frozen tensor");
  if (!param.same_shape(grad)) {
    throw DimensionError("gradient " + shape_string(grad.shape()) + " does not match parameter " +
                         shape_string(param.shape()));
  }
  const double eps1 = config_.epsilon1;
  const std::size_t rows = param.rows(), cols = param.cols();
  auto [it, fresh] = slots_.try_emplace(&param);
  AdafactorSlot& s = it->second;
  if (fresh) {
    s.factored = param.rank() == 2 && rows > 1 && cols > 1;
    if (s.factored) {
      s.row = Tensor(Shape{rows});
      s.col = Tensor(Shape{cols});
    } else {
      s.full = Tensor(param.shape());
    }
  }

  Tensor v(param.shape());
  if (s.factored) {
    std::vector<double> col_sum(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double g2 = grad(i, j) * grad(i, j) + eps1;
        row_sum += g2;
        col_sum[j] += g2;
      }
      s.row[i] = beta2 * s.row[i] + (1.0 - beta2) * row_sum;
    }
    for (std::size_t j = 0; j < cols; ++j) s.col[j] = beta2 * s.col[j] + (1.0 - beta2) * col_sum[j];
    double row_total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) row_total += s.row[i];
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) v(i, j) = s.row[i] * s.col[j] / row_total;
    }
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      s.full[i] = beta2 * s.full[i] + (1.0 - beta2) * (grad[i] * grad[i] + eps1);
      v[i] = s.full[i];
    }
  }

  Tensor u(param.shape());
  double sq = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = grad[i] / std::sqrt(v[i]);
    sq += u[i] * u[i];
  }
  const double rms = u.size() ? std::sqrt(sq / static_cast<double>(u.size())) : 0.0;
  const double denom = std::max(1.0, rms / config_.clip_threshold);
  last_rms_ = std::max(last_rms_, rms / denom);

  double alpha = config_.learning_rate;
  if (config_.parameter_scaling) {
    double psq = 0.0;
    for (double x : param.data()) psq += x * x;
    const double prms = param.size() ? std::sqrt(psq / static_cast<double>(param.size())) : 0.0;
    alpha *= std::max(config_.epsilon2, prms);
  }
  const double decay = 1.0 - config_.learning_rate * config_.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    param[i] *= decay;
    param[i] -= alpha * (u[i] / denom);
  }
}

// ---- pre-training ----

namespace {

std::vector<std::vector<TokenId>> encode_corpus(const Vocabulary& vocab, const Corpus& corpus, std::size_t max_length) {
  std::vector<std::vector<TokenId>> docs;
  for (const Document& d : corpus.documents) {
    std::vector<TokenId> ids = vocab.encode(d);
    if (ids.size() > max_length) ids.resize(max_length);
    if (ids.size() >= 2) docs.push_back(std::move(ids));
  }
  if (docs.empty()) throw CorpusError("no document has the two tokens pre-training needs");
  return docs;
}

std::vector<Tensor*> all_tensors(ModelParams& params) {
  std::vector<Tensor*> out;
  params.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

}  // namespace

PretrainReport pretrain(ModelParams& params, const Vocabulary& vocab, const Corpus& corpus, const PretrainConfig& cfg,
                        std::ostream* log) {
  if (cfg.batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (params.config.vocab_size != vocab.size()) {
    throw ConfigError("model vocabulary of " + std::to_string(params.config.vocab_size) +
                      " does not match the tokenizer's " + std::to_string(vocab.size()));
  }
  cfg.span.validate();
  const auto docs = encode_corpus(vocab, corpus, cfg.max_length);
  params.set_trainable(true);
  const std::vector<Tensor*> tensors = all_tensors(params);
  AdafactorConfig ac;
  ac.learning_rate = cfg.learning_rate;
  ac.weight_decay = 0.0;
  ac.parameter_scaling = cfg.parameter_scaling;
  Adafactor opt(ac);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, docs.size() - 1);

  PretrainReport report;
  auto run = [&](std::uint64_t steps, bool span_phase, std::vector<double>& losses) {
    for (std::uint64_t step = 1; step <= steps; ++step) {
      std::vector<Text2TextExample> batch;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto& doc = docs[pick(rng)];
        if (span_phase) {
          SpanCorruptionConfig sc = cfg.span;
          sc.seed = rng();
          batch.push_back(sample_span_corruption(doc, sc, vocab));
          ensure_eos(batch.back());
        } else {
          batch.push_back(sample_lm_example(doc, rng));
        }
      }
      Tape tape;
      std::vector<SequencePair> pairs;
      for (const auto& ex : batch) pairs.push_back({Var{}, ex.input, ex.target});
      Var loss = batch_loss(tape, params, pairs);
      opt.step(tensors, tape.backward(loss));
      losses.push_back(loss.value()[0]);
      if (log != nullptr && (step % 100 == 0 || step == steps)) {
        *log << (span_phase ? "span" : "lm") << " step " << step << " loss " << loss.value()[0] << '\n';
      }
    }
  };
  run(cfg.span_steps, true, report.span_losses);
  run(cfg.lm_steps, false, report.lm_losses);
  params.recipe.span_corruption_steps += cfg.span_steps;
  params.recipe.lm_adaptation_steps += cfg.lm_steps;
  params.set_trainable(false);
  return report;
}

double sentinel_initial_rate(const ModelParams& params, const Vocabulary& vocab,
                             std::span<const std::vector<TokenId>> inputs, std::size_t max_len) {
  if (inputs.empty()) throw InputError("no inputs to decode");
  std::size_t hits = 0;
  for (const auto& input : inputs) {
    const auto out = greedy_decode(params, nullptr, input, max_len);
    if (vocab.is_sentinel(out.front())) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(inputs.size());
}

// ---- evaluation ----

namespace {

bool wants(const Task& task, std::string_view metric) {
  return std::find(task.meta.metrics.begin(), task.meta.metrics.end(), metric) != task.meta.metrics.end();
}

}  // namespace

std::vector<Prediction> predict_batch(const ModelParams& params, std::span<const Tensor* const> prompts,
                                      const Text2TextExample& example, const Task& task, std::size_t max_decode_len) {
  std::vector<Prediction> out(prompts.size());
  if (wants(task, kAccuracy)) {
    const auto scores = score_classes_batch(params, prompts, example.input, task.candidates);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      out[i].label = argmax(scores[i]);
      out[i].scores = scores[i];
    }
  }
  if (wants(task, kExactMatch)) {
    auto decoded = greedy_decode_batch(params, prompts, example.input, max_decode_len);
    for (std::size_t i = 0; i < prompts.size(); ++i) out[i].tokens = std::move(decoded[i]);
  }
  return out;
}

double score_prediction(const Prediction& p, const Text2TextExample& example, const Task& task,
                        const std::string& metric) {
  if (metric == kAccuracy) {
    return p.label < task.candidates.size() && task.candidates[p.label] == example.target ? 1.0 : 0.0;
  }
  if (metric == kExactMatch) return p.tokens == example.target ? 1.0 : 0.0;
  throw ConfigError("unknown metric '" + metric + "'");
}

EvalResult evaluate(const ModelParams& params, const Tensor* prompt, std::span<const Text2TextExample> examples,
                    const Task& task, std::size_t max_decode_len) {
  if (examples.empty()) throw InputError("cannot evaluate on an empty set");
  for (const std::string& m : task.meta.metrics) {
    if (m != kAccuracy && m != kExactMatch) throw ConfigError("unknown metric '" + m + "'");
  }
  std::map<std::string, double> totals;
  double loss_sum = 0.0;
  std::size_t loss_tokens = 0;
  const std::vector<const Tensor*> prompts = {prompt};
  for (const Text2TextExample& ex : examples) {
    const Prediction p = predict_batch(params, prompts, ex, task, max_decode_len)[0];
    for (const std::string& m : task.meta.metrics) totals[m] += score_prediction(p, ex, task, m);
    const std::size_t gold = task.label_of(ex.target);
    if (gold < p.scores.size()) {
      loss_sum -= p.scores[gold];
    } else {
      loss_sum += forward(params, prompt, ex.input, ex.target).loss * static_cast<double>(ex.target.size());
    }
    loss_tokens += ex.target.size();
  }
  EvalResult r;
  const double n = static_cast<double>(examples.size());
  for (const std::string& m : task.meta.metrics) {
    r.metrics[m] = totals[m] / n;
    r.stop_metric += r.metrics[m];
  }
  r.stop_metric /= static_cast<double>(task.meta.metrics.size());
  r.loss = loss_sum / static_cast<double>(loss_tokens);
  return r;
}

// ---- prompt tuning ----

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("steps must be at least 1");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (eval_every == 0) throw ConfigError("eval_every must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (max_decode_len == 0) throw ConfigError("max decode length must be at least 1");
}

std::string metrics_json_line(const EvalRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  for (const auto& [name, value] : record.result.metrics) j[name] = value;
  j["stop_metric"] = record.result.stop_metric;
  j["loss"] = record.result.loss;
  j["train_loss"] = record.train_loss;
  return j.dump();
}

TuneResult tune_prompt(const FrozenModel& model, PromptCheckpoint prompt, std::span<const Text2TextExample> train,
                       std::span<const Text2TextExample> dev, const Task& task, const TrainConfig& cfg,
                       std::ostream* metrics_log) {
  cfg.validate();
  require_same_model(prompt, model);
  if (train.empty()) throw InputError("empty training set");
  if (dev.empty()) throw InputError("empty development set");
  if (!cfg.metric.empty() && std::find(task.meta.metrics.begin(), task.meta.metrics.end(), cfg.metric) ==
                                 task.meta.metrics.end()) {
    throw ConfigError("early-stop metric '" + cfg.metric + "' is not a metric of task '" + task.meta.name + "'");
  }
  const ModelParams& params = model.params();
  Tensor& p = prompt.prompt.matrix;
  if (p.cols() != params.config.d_model) {
    throw DimensionError("prompt width " + std::to_string(p.cols()) + " does not match the model");
  }
  p.set_trainable(true);

  AdafactorConfig ac = cfg.adafactor;
  ac.learning_rate = cfg.learning_rate;
  Adafactor opt(ac);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();

  TuneResult result;
  auto record = [&](std::size_t step, double train_loss) {
    EvalRecord rec;
    rec.step = step;
    rec.result = evaluate(params, &p, dev, task, cfg.max_decode_len);
    rec.selection = cfg.metric.empty() ? rec.result.stop_metric : rec.result.metrics.at(cfg.metric);
    rec.train_loss = train_loss;
    if (metrics_log != nullptr) *metrics_log << metrics_json_line(rec) << '\n';
    if (result.history.empty() || rec.selection > result.best_metric) {
      result.best_metric = rec.selection;
      result.best_step = step;
      result.best = prompt;
    }
    result.history.push_back(std::move(rec));
    return cfg.target_metric.has_value() && result.best_metric >= *cfg.target_metric;
  };

  bool stop = record(0, 0.0);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t step = 1; step <= cfg.steps && !stop; ++step) {
    std::vector<SequencePair> batch;
    Tape tape;
    Var pv = tape.param(p);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Text2TextExample& ex = train[order[cursor++]];
      batch.push_back({pv, ex.input, ex.target});
    }
    Var loss = batch_loss(tape, params, batch);
    const GradientRecord grads = tape.backward(loss);
    opt.step(p, grads.at(p));
    result.max_update_rms = std::max(result.max_update_rms, opt.last_update_rms());
    loss_sum += loss.value()[0];
    ++loss_count;
    result.steps_run = step;
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      stop = record(step, loss_sum / static_cast<double>(loss_count));
      loss_sum = 0.0;
      loss_count = 0;
    }
  }
  result.last = std::move(prompt);
  return result;
}

}  // namespace ptune
