// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "gradient_trials.hpp"
#include "ptune/accounting.hpp"
#include "ptune/ensemble.hpp"
#include "ptune/interpret.hpp"
#include "ptune/synthetic.hpp"
#include "ptune/trainer.hpp"
#include "span_support.hpp"
#include "test_support.hpp"

using namespace ptune;
using ptune::testing::random_matrix;
using ptune::testing::random_size;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed condition; the first few are kept in the detail.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail.clear();
    if (pass || detail.size() < 400) detail += (detail.empty() ? "" : "; ") + what;
    pass = false;
  }
  void note(const std::string& text) { detail += (detail.empty() ? "" : "; ") + text; }
};

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

std::vector<TokenId> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids(n);
  for (auto& t : ids) t = static_cast<TokenId>(random_size(rng, Vocabulary::kFirstText, vocab - 1));
  return ids;
}

Tensor rows_of(const Tensor& table, std::span<const TokenId> ids) {
  Tensor out = Tensor::matrix(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(table.row(ids[i]).begin(), table.row(ids[i]).end(), out.row(i).begin());
  }
  return out;
}

bool equals_row(std::span<const double> row, const Tensor& table, TokenId id) {
  const auto src = table.row(id);
  return std::equal(row.begin(), row.end(), src.begin(), src.end());
}

// ---- shared desk-scale setup ----

constexpr std::uint64_t kSpanSteps = 5000;
constexpr std::uint64_t kLmSteps = 1500;
constexpr std::size_t kPromptLength = 20;
constexpr std::size_t kTuneBatch = 8;
const std::vector<std::uint64_t> kSeeds = {0, 1, 2};

struct Desk {
  Corpus corpus = synthetic_corpus(2000, 1);
  Vocabulary vocab = Vocabulary::build(corpus, 512, 8);
  Task task = make_task(synthetic_review_metadata(), vocab);
  std::vector<Text2TextExample> train = encode_examples(synthetic_reviews(200, 10), task, vocab);
  std::vector<Text2TextExample> dev = encode_examples(synthetic_reviews(100, 11), task, vocab);
  std::optional<FrozenModel> span_model;
  std::optional<FrozenModel> lm_model;
  double pretrain_seconds = 0.0;

  // Span corruption from scratch, then LM adaptation of a copy.
  void pretrain_once() {
    if (span_model) return;
    const auto start = Clock::now();
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    ModelParams params = ModelParams::initialize(mc, 1);
    PretrainConfig span_cfg;
    span_cfg.span_steps = kSpanSteps;
    span_cfg.seed = 1;
    pretrain(params, vocab, corpus, span_cfg);
    span_model = freeze(params);
    PretrainConfig lm_cfg;
    lm_cfg.lm_steps = kLmSteps;
    lm_cfg.seed = 2;
    pretrain(params, vocab, corpus, lm_cfg);
    lm_model = freeze(std::move(params));
    pretrain_seconds = seconds_since(start);
  }

  PromptCheckpoint class_label_prompt(const FrozenModel& model, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    const std::size_t band = std::min(kCommonBandSize, vocab.num_text_tokens());
    return bind(init_class_label(kPromptLength, model.params().embedding, task.meta.labels, vocab, band, rng), model);
  }

  TrainConfig tune_config(std::size_t steps, std::uint64_t seed) const {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = kTuneBatch;
    tc.eval_every = 50;
    tc.seed = seed;
    return tc;
  }
};

Desk& desk() {
  static Desk d;
  return d;
}

// ---- criteria ----

Outcome parameter_goldens() {
  Outcome o;
  const auto start = Clock::now();
  std::ostringstream out, err;
  const int code = cli::run({"params", "--golden"}, out, err);
  o.require(code == cli::kExitOk, "params --golden exited " + std::to_string(code));

  std::istringstream lines(out.str());
  std::string line;
  std::getline(lines, line);
  o.require(line == "method,size,length,train,inference,percent,golden", "unexpected header '" + line + "'");

  const auto& goldens = printed_counts();
  std::size_t rows = 0, trainable_ok = 0, percent_ok = 0;
  std::vector<std::string> unexpected;
  bool flagged_reported = true;
  for (const auto& g : goldens) {
    if (!std::getline(lines, line)) break;
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 7 || cells[1] != g.size || cells[2] != std::to_string(g.length)) {
      o.require(false, "row mismatch: " + line);
      continue;
    }
    const std::string status = cells[6];
    const bool trainable_match = cells[3] == std::to_string(g.trainable);
    trainable_ok += trainable_match;
    const bool percent_flagged = g.flagged && g.size == "Large";
    const bool total_flagged = g.flagged && g.size == "XXL";
    const bool percent_bad = status.find("percent") != std::string::npos;
    const bool total_bad = status.find("total") != std::string::npos;
    percent_ok += !percent_bad;
    if (g.flagged) {
      // Flagged cells must surface as discrepancies; the rest of the row must match.
      const bool expected = (percent_flagged && percent_bad) || (total_flagged && total_bad);
      const bool other = status.find("trainable") != std::string::npos || (percent_flagged && total_bad) ||
                         (total_flagged && percent_bad);
      if (!expected || other) flagged_reported = false;
    } else if (status != "pass") {
      unexpected.push_back(g.size + "/" + std::to_string(g.length) + " " + status);
    }
  }
  o.require(rows == 30, std::to_string(rows) + " rows, expected 30");
  o.require(flagged_reported, "flagged cells Large/100 percent and XXL/50 total not reported as discrepancies");
  for (const auto& u : unexpected) o.require(false, "printed cell not reproduced: " + u);

  const auto fig = task_params(MethodSpec(Method::kPromptTuning), t5_size("XXL"), 5);
  o.require(fig.train == 20480, "XXL p=5 gives " + std::to_string(fig.train));
  const double elapsed = seconds_since(start);
  o.require(elapsed < 1.0, "runtime " + fmt("%.3f s", elapsed));
  o.note(std::to_string(trainable_ok) + "/30 trainable cells and " + std::to_string(percent_ok) +
         "/30 percent cells reproduced, flagged cells " + (flagged_reported ? "reported" : "missing") +
         ", XXL p=5 trainable " + std::to_string(fig.train) + ", " + fmt("%.3f s", elapsed));
  return o;
}

Outcome hard_token_equivalence() {
  Outcome o;
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  int equal = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const ModelParams p = ModelParams::initialize(ModelConfig{}, rng());
    const std::size_t plen = random_size(rng, 1, 8), n = random_size(rng, 0, 16), t = random_size(rng, 1, 4);
    const auto prompt_ids = random_ids(rng, plen, p.config.vocab_size);
    const auto input = random_ids(rng, n, p.config.vocab_size);
    const auto target = random_ids(rng, t, p.config.vocab_size);
    const Tensor prompt = rows_of(p.embedding, prompt_ids);
    std::vector<TokenId> hard = prompt_ids;
    hard.insert(hard.end(), input.begin(), input.end());
    const ForwardResult soft = forward(p, &prompt, input, target);
    const ForwardResult tokens = forward(p, nullptr, hard, target);
    const bool same = soft.logits.bitwise_equal(tokens.logits) && soft.loss == tokens.loss;
    equal += same;
    o.require(same, "draw " + std::to_string(trial) + " differs");
  }
  const double elapsed = seconds_since(start);
  o.require(elapsed < 60.0, "runtime " + fmt("%.1f s", elapsed));
  o.note(std::to_string(equal) + "/100 draws bitwise equal");
  return o;
}

Outcome gradient_soundness() {
  Outcome o;
  constexpr int kTrials = 100;
  constexpr double kTolerance = 1e-4;
  double overall = 0.0;
  std::size_t checks = 0;
  auto run = [&](const std::string& name, const std::function<double(std::mt19937_64&)>& trial) {
    std::mt19937_64 rng(std::hash<std::string>{}(name));
    double worst = 0.0;
    for (int i = 0; i < kTrials; ++i) worst = std::max(worst, trial(rng));
    overall = std::max(overall, worst);
    ++checks;
    o.require(worst < kTolerance, name + " worst " + fmt("%.2e", worst));
  };
  for (const auto& t : ptune::testing::op_gradient_trials()) run(t.name, t.run);
  run("end-to-end prompt", ptune::testing::end_to_end_prompt_trial);
  o.note(std::to_string(checks) + " gradients x " + std::to_string(kTrials) + " trials, worst relative error " +
         fmt("%.2e", overall));
  return o;
}

Outcome frozen_invariance() {
  Outcome o;
  Desk& d = desk();
  d.pretrain_once();
  const FrozenModel& model = *d.lm_model;
  std::vector<Tensor> before;
  model.params().for_each([&](const std::string&, const Tensor& t) { before.push_back(t); });
  const PromptCheckpoint init = d.class_label_prompt(model, 7);

  TrainConfig tc = d.tune_config(2000, 7);
  tc.eval_every = 500;
  const TuneResult r = tune_prompt(model, init, d.train, d.dev, d.task, tc);
  o.require(r.steps_run == 2000, "ran " + std::to_string(r.steps_run) + " steps");

  o.require(parameter_digest(model.params()) == model.digest(), "theta digest changed");
  std::set<std::string> changed;
  std::size_t i = 0;
  model.params().for_each([&](const std::string& name, const Tensor& t) {
    if (!t.bitwise_equal(before[i++])) changed.insert(name);
  });
  if (!r.last.prompt.matrix.bitwise_equal(init.prompt.matrix)) changed.insert("prompt");
  o.require(changed == std::set<std::string>{"prompt"}, "changed set has " + std::to_string(changed.size()) +
                                                            " entries");
  o.require(r.last.model_digest == model.digest() && r.best.model_digest == model.digest(),
            "checkpoint bound to another digest");
  o.note("2000 steps, digest " + std::to_string(model.digest()) + " unchanged, changed set == {prompt}");
  return o;
}

Outcome ensemble_equivalence() {
  Outcome o;
  Desk& d = desk();
  ModelConfig mc;
  mc.vocab_size = d.vocab.size();
  const FrozenModel model = freeze(ModelParams::initialize(mc, 3));
  Task task = d.task;
  task.meta.metrics = {std::string(kAccuracy), std::string(kExactMatch)};
  std::mt19937_64 rng(5);
  EnsembleSpec spec;
  for (std::size_t i = 0; i < 5; ++i) {
    spec.members.push_back(bind(init_random_uniform(random_size(rng, 1, 20), mc.d_model, rng), model));
  }
  const auto examples = encode_examples(synthetic_reviews(50, 21), task, d.vocab);
  std::size_t equal = 0;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    const auto logits = replicated_logits(model, spec, ex.input, ex.target);
    const auto preds = replicated_forward(model, spec, ex, task, 4);
    bool same = logits.size() == 5 && preds.size() == 5;
    for (std::size_t i = 0; same && i < 5; ++i) {
      const Tensor* prompt = &spec.members[i].prompt.matrix;
      const ForwardResult single = forward(model.params(), prompt, ex.input, ex.target);
      const auto scores = score_classes(model.params(), prompt, ex.input, task.candidates);
      const auto decoded = greedy_decode(model.params(), prompt, ex.input, 4);
      same = logits[i].bitwise_equal(single.logits) && preds[i].scores == scores && preds[i].tokens == decoded &&
             preds[i].label == argmax(scores);
    }
    equal += same;
    o.require(same, "example " + std::to_string(e) + " differs");
  }
  const std::vector<std::string> order = {"A", "B"};
  o.require(majority_vote(std::vector<std::string>{"A", "A", "B", "A", "B"}, order) == "A", "[A,A,B,A,B] != A");
  o.require(majority_vote(std::vector<std::string>{"A", "B"}, order) == "A", "[A,B] != A");
  o.require(majority_vote(std::vector<std::string>{"B", "B", "B"}, order) == "B", "[B,B,B] != B");
  o.note(std::to_string(equal) + "/50 examples bitwise equal (logits, scores, decodes), 3/3 vote examples");
  return o;
}

Outcome span_corruption_golden() {
  Outcome o;
  using namespace ptune::testing;
  const Vocabulary v = sentence_vocab();
  const auto tokens = v.encode(kSpanSentence);
  const std::vector<Span> spans = {{2, 4}, {8, 9}};
  const Text2TextExample ex = corrupt_with_spans(tokens, spans, v);
  const std::string input = v.decode_text(ex.input), target = v.decode_text(ex.target);
  o.require(input == "Thank you ⟨X⟩ me to your party ⟨Y⟩ week", "input '" + input + "'");
  o.require(target == "⟨X⟩ for inviting ⟨Y⟩ last ⟨Z⟩", "target '" + target + "'");

  std::mt19937_64 rng(99);
  std::size_t rebuilt = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto draw = random_span_draw(rng);
    const Text2TextExample c = corrupt_with_spans(draw.tokens, draw.spans, v);
    rebuilt += reconstruct(c, v) == draw.tokens && count_sentinels(c.input, v) == draw.spans.size() &&
               count_sentinels(c.target, v) == draw.spans.size() + 1;
  }
  o.require(rebuilt == 1000, std::to_string(rebuilt) + "/1000 reconstructions");

  const Desk& d = desk();
  std::size_t sampled = 0, leading = 0;
  for (std::size_t i = 0; i < d.corpus.documents.size(); ++i) {
    const auto doc = d.vocab.encode(d.corpus.documents[i]);
    if (doc.size() < 4) continue;
    SpanCorruptionConfig cfg;
    cfg.seed = i;
    const Text2TextExample s = sample_span_corruption(doc, cfg, d.vocab);
    ++sampled;
    leading += !s.target.empty() && d.vocab.is_sentinel(s.target.front());
    if (reconstruct(s, d.vocab) != doc) o.require(false, "sampled example " + std::to_string(i) + " not invertible");
  }
  o.require(leading == sampled, std::to_string(leading) + "/" + std::to_string(sampled) + " sentinel-led targets");
  o.note("worked example verbatim, 1000/1000 reconstructions, " + std::to_string(sampled) +
         "/" + std::to_string(sampled) + " sampled targets sentinel-led");
  return o;
}

Outcome init_contracts() {
  Outcome o;
  std::mt19937_64 rng(1);
  const PromptParams uniform = init_random_uniform(100, 64, rng);
  const auto [lo, hi] = std::minmax_element(uniform.matrix.data().begin(), uniform.matrix.data().end());
  o.require(*lo >= -0.5 && *hi <= 0.5, "uniform outside [-0.5, 0.5]");

  const Desk& d = desk();
  const Tensor e = random_matrix(d.vocab.size(), 32, rng);
  const std::size_t band = std::min(kCommonBandSize, d.vocab.num_text_tokens());
  const auto band_ids = d.vocab.common_band(band);
  const std::set<TokenId> in_band(band_ids.begin(), band_ids.end());
  const PromptParams sampled = init_sampled_vocab(150, e, d.vocab, band, rng);
  bool sampled_ok = true;
  for (std::size_t i = 0; i < sampled.length(); ++i) {
    const TokenId id = sampled.provenance[i].ids.at(0);
    sampled_ok = sampled_ok && in_band.count(id) && equals_row(sampled.matrix.row(i), e, id);
  }
  o.require(sampled_ok, "sampled-vocab row differs from its embedding row or leaves the band");

  const Vocabulary lv = Vocabulary::build(Corpus::from_text("True False not entailment the a of to and in is it"), 64, 4);
  const Tensor le = random_matrix(lv.size(), 16, rng);
  const std::vector<std::string> labels = {"not entailment", "True"};
  const PromptParams cl = init_class_label(5, le, labels, lv, 4, rng);
  double worst = 0.0;
  for (std::size_t c = 0; c < 16; ++c) {
    worst = std::max(worst, std::fabs(cl.matrix(0, c) - (le(lv.id("not"), c) + le(lv.id("entailment"), c)) / 2.0));
  }
  o.require(worst <= 1e-15, "multi-token label mean off by " + fmt("%.2e", worst));
  o.require(equals_row(cl.matrix.row(1), le, lv.id("True")), "single-token label row differs");
  bool fallback_ok = true;
  for (std::size_t i = 2; i < 5; ++i) {
    fallback_ok = fallback_ok && cl.provenance[i].source == RowProvenance::Source::kVocab &&
                  equals_row(cl.matrix.row(i), le, cl.provenance[i].ids.at(0));
  }
  o.require(fallback_ok, "rows beyond the labels are not sampled-vocab rows");
  o.note("uniform in [" + fmt("%.4f", *lo) + ", " + fmt("%.4f", *hi) + "], " + std::to_string(sampled.length()) +
         " sampled rows exact within band " + std::to_string(band) + ", label mean error " + fmt("%.1e", worst) +
         ", 3 fallback rows");
  return o;
}

Outcome adafactor_oracle() {
  Outcome o;
  const double lr = 0.3, wd = 1e-5, eps1 = 1e-30;
  AdafactorConfig cfg;
  cfg.learning_rate = lr;
  cfg.weight_decay = wd;
  Adafactor opt(cfg);
  Tensor w({1}, 0.0);
  w.set_trainable(true);
  double ref = 0.0, v = 0.0, worst = 0.0;
  for (int t = 1; t <= 50; ++t) {
    opt.step(w, Tensor({1}, 2.0 * (w[0] - 3.0)));
    const double g = 2.0 * (ref - 3.0);
    const double beta = 1.0 - std::pow(t, -0.8);
    v = beta * v + (1.0 - beta) * (g * g + eps1);
    const double u = g / std::sqrt(v);
    ref = ref * (1.0 - lr * wd) - lr * u / std::max(1.0, std::fabs(u));
    worst = std::max(worst, std::fabs(w[0] - ref));
  }
  o.require(worst <= 1e-12, "trajectory off by " + fmt("%.2e", worst));

  Adafactor decay(cfg);
  Tensor z = Tensor::matrix(3, 4, 1.7);
  z.set_trainable(true);
  decay.step(z, Tensor::matrix(3, 4, 0.0));
  bool pure = true;
  for (double x : z.data()) pure = pure && x == 1.7 * (1.0 - lr * 1e-5);
  o.require(pure, "zero-gradient step is not pure decay");

  cfg.weight_decay = 0.0;
  Adafactor still(cfg);
  Tensor s({2}, -0.25);
  s.set_trainable(true);
  still.step(s, Tensor({2}, 0.0));
  o.require(s[0] == -0.25 && s[1] == -0.25, "zero gradient without decay moved the parameter");
  o.note("50-step max deviation " + fmt("%.1e", worst) + ", zero-gradient factor (1 - lr*1e-5) exact");
  return o;
}

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

std::string join(const std::vector<double>& xs) {
  std::string out;
  for (double x : xs) out += (out.empty() ? "" : ",") + fmt("%.2f", x);
  return out;
}

Outcome pretraining_direction() {
  Outcome o;
  Desk& d = desk();
  d.pretrain_once();
  const auto start = Clock::now();
  std::vector<std::vector<TokenId>> prefixes;
  for (const auto& s : synthetic_prefixes(100, 99)) prefixes.push_back(d.vocab.encode(s));
  const double span_rate = sentinel_initial_rate(d.span_model->params(), d.vocab, prefixes);
  const double lm_rate = sentinel_initial_rate(d.lm_model->params(), d.vocab, prefixes);

  std::vector<double> span_acc, lm_acc;
  for (std::uint64_t seed : kSeeds) {
    for (auto [model, acc] : {std::pair{&*d.span_model, &span_acc}, std::pair{&*d.lm_model, &lm_acc}}) {
      const TuneResult r =
          tune_prompt(*model, d.class_label_prompt(*model, seed), d.train, d.dev, d.task, d.tune_config(300, seed));
      acc->push_back(r.best_metric);
    }
  }
  const double total = d.pretrain_seconds + seconds_since(start);
  o.require(mean(lm_acc) >= mean(span_acc), "LM mean " + fmt("%.3f", mean(lm_acc)) + " < span mean " +
                                                fmt("%.3f", mean(span_acc)));
  o.require(span_rate > lm_rate, "sentinel-initial rate span " + fmt("%.2f", span_rate) + " <= LM " +
                                     fmt("%.2f", lm_rate));
  o.require(total < 600.0, "runtime " + fmt("%.0f s", total));
  o.note("dev accuracy LM [" + join(lm_acc) + "] mean " + fmt("%.3f", mean(lm_acc)) + " >= span [" + join(span_acc) +
         "] mean " + fmt("%.3f", mean(span_acc)) + "; sentinel-initial rate span " + fmt("%.2f", span_rate) +
         " > LM " + fmt("%.2f", lm_rate) + "; " + fmt("%.0f s", total) + " incl. pre-training");
  return o;
}

Outcome learnability() {
  Outcome o;
  Desk& d = desk();
  d.pretrain_once();
  std::vector<double> acc;
  std::string steps;
  for (std::uint64_t seed : kSeeds) {
    TrainConfig tc = d.tune_config(2000, seed);
    tc.target_metric = 0.95;
    const TuneResult r = tune_prompt(*d.lm_model, d.class_label_prompt(*d.lm_model, seed), d.train, d.dev, d.task, tc);
    const double dev = evaluate(d.lm_model->params(), &r.best.prompt.matrix, d.dev, d.task).metrics.at("accuracy");
    acc.push_back(dev);
    steps += (steps.empty() ? "" : ",") + std::to_string(r.best_step);
    o.require(dev >= 0.95 && r.best_step <= 2000, "seed " + std::to_string(seed) + " reached " + fmt("%.3f", dev));
  }
  o.note("dev accuracy [" + join(acc) + "] at steps [" + steps + "]");
  return o;
}

Outcome interpretability() {
  Outcome o;
  Desk& d = desk();
  d.pretrain_once();
  const Tensor& e = d.lm_model->params().embedding;
  const NeighborIndex index(e, d.vocab);

  std::mt19937_64 rng(13);
  const PromptParams copied = init_sampled_vocab(100, e, d.vocab, d.vocab.num_text_tokens(), rng);
  const NeighborReport report = nearest_neighbors(copied.matrix, e, d.vocab, kDefaultNeighbors);
  std::size_t self = 0;
  for (std::size_t i = 0; i < copied.length(); ++i) {
    const auto& row = report.rows[i];
    self += !row.empty() && row.front().id == copied.provenance[i].ids[0] && 1.0 - row.front().similarity == 0.0;
  }
  o.require(self == copied.length(), std::to_string(self) + "/100 rows found themselves at distance 0");

  std::size_t invariant = 0, matches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor q = random_matrix(1, e.cols(), rng);
    Tensor scaled = q;
    const double factor = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
    for (double& x : scaled.data()) x *= factor;
    const auto a = index.query(q.row(0), d.vocab.size());
    const auto b = index.query(scaled.row(0), d.vocab.size());
    bool same = a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].id == b[i].id;
    invariant += same;
    const std::size_t k = random_size(rng, 1, d.vocab.size() + 2);
    matches += index.query(q.row(0), k) == exhaustive_neighbors(q.row(0), e, d.vocab, k);
  }
  o.require(invariant == 100, std::to_string(invariant) + "/100 argsorts invariant under scaling");
  o.require(matches == 100, std::to_string(matches) + "/100 indexed searches equal the exhaustive scan");
  o.note("100/100 self-neighbors at distance 0, 100/100 scale-invariant argsorts, 100/100 index == scan");
  return o;
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "parameter-count goldens", parameter_goldens},
      {2, "hard-token equivalence", hard_token_equivalence},
      {3, "gradient soundness", gradient_soundness},
      {4, "frozen-theta invariance", frozen_invariance},
      {5, "ensemble batching equivalence", ensemble_equivalence},
      {6, "span-corruption golden", span_corruption_golden},
      {7, "initialization contracts", init_contracts},
      {8, "adafactor oracle", adafactor_oracle},
      {9, "directional pre-training result", pretraining_direction},
      {10, "end-to-end learnability", learnability},
      {11, "interpretability contracts", interpretability},
  };
  {
    const auto start = Clock::now();
    desk().pretrain_once();
    std::cout << "setup: span-corruption model (" << kSpanSteps << " steps) and LM-adapted copy (+" << kLmSteps
              << " steps) pre-trained in " << fmt("%.1f s", seconds_since(start)) << std::endl;
  }
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.number << "] " << c.name << ": " << o.detail << " ("
              << fmt("%.2f s", seconds_since(start)) << ")" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
