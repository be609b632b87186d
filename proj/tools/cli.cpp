#include "cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ptune/accounting.hpp"
#include "ptune/ensemble.hpp"
#include "ptune/error.hpp"
#include "ptune/interpret.hpp"
#include "ptune/synthetic.hpp"
#include "ptune/trainer.hpp"
#include "run_config.hpp"

namespace ptune::cli {

namespace fs = std::filesystem;

namespace {

// Flags shared by every subcommand that reads a run config.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  RunConfig load() const {
    RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::read(config);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Run config file (key = value, version mandatory)");
  sub->add_option("--seed", c.seed, "Seed for every random choice");
}

fs::path vocab_path_for(const fs::path& model) { return fs::path(model.string() + ".vocab"); }

fs::path require_path(const fs::path& p, const char* what) {
  if (p.empty()) throw InputError(std::string("no ") + what + " given");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

struct LoadedModel {
  FrozenModel model;
  Vocabulary vocab;
};

LoadedModel load_frozen(const fs::path& path) {
  Vocabulary vocab = Vocabulary::load(vocab_path_for(require_path(path, "model checkpoint")));
  FrozenModel model = freeze(load_model(path));
  if (model.config().vocab_size != vocab.size()) {
    throw ConfigError("vocabulary next to " + path.string() + " does not match the model");
  }
  return {std::move(model), std::move(vocab)};
}

struct TaskData {
  Task task;
  std::vector<Text2TextExample> train;
  std::vector<Text2TextExample> dev;
};

TaskData load_task(const RunConfig& cfg, const Vocabulary& vocab, bool need_train) {
  TaskData d;
  d.task = make_task(TaskMetadata::read(require_path(cfg.metadata, "task metadata")), vocab, cfg.sentinel_target);
  if (need_train) {
    const auto pairs = read_tsv(require_path(cfg.train_data, "training TSV"));
    d.train = encode_examples(pairs, d.task, vocab);
  }
  const auto dev = read_tsv(require_path(cfg.dev_data, "development TSV"));
  d.dev = encode_examples(dev, d.task, vocab);
  return d;
}

PromptParams initial_prompt(const RunConfig& cfg, const FrozenModel& model, const Vocabulary& vocab, const Task& task,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor& e = model.params().embedding;
  const std::size_t band = std::min(cfg.band, vocab.num_text_tokens());
  switch (cfg.init) {
    case InitKind::kRandomUniform:
      return init_random_uniform(cfg.prompt_length, e.cols(), rng, cfg.init_range);
    case InitKind::kSampledVocab:
      return init_sampled_vocab(cfg.prompt_length, e, vocab, band, rng);
    case InitKind::kClassLabel:
      return init_class_label(cfg.prompt_length, e, task.meta.init_words(), vocab, band, rng);
  }
  throw ConfigError("unknown init kind");
}

TuneResult tune_once(const RunConfig& cfg, const FrozenModel& model, const Vocabulary& vocab, const TaskData& data,
                     std::uint64_t seed, std::ostream* metrics) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  PromptCheckpoint init = bind(initial_prompt(cfg, model, vocab, data.task, seed), model);
  return tune_prompt(model, std::move(init), data.train, data.dev, data.task, tc, metrics);
}

// ---- subcommands ----

struct PretrainArgs {
  Common common;
  std::string corpus, out, from;
  std::optional<std::uint64_t> span_steps, lm_steps;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.common.load();
  if (!a.corpus.empty()) cfg.corpus = a.corpus;
  if (!a.out.empty()) cfg.output = a.out;
  if (a.span_steps) cfg.pretrain.span_steps = *a.span_steps;
  if (a.lm_steps) cfg.pretrain.lm_steps = *a.lm_steps;
  const Corpus corpus = Corpus::read(require_path(cfg.corpus, "corpus"));
  const fs::path output = require_path(cfg.output, "output path");

  ModelParams params;
  Vocabulary vocab = Vocabulary::build(corpus, cfg.max_vocab, cfg.sentinels);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = cfg.seed;
  pc.span = cfg.span;
  if (!a.from.empty()) {
    // Continue an existing model, e.g. LM adaptation of a span-corruption checkpoint.
    LoadedModel base = load_frozen(a.from);
    vocab = std::move(base.vocab);
    params = base.model.params();
    if (!a.span_steps) pc.span_steps = 0;
  } else {
    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    params = ModelParams::initialize(mc, cfg.seed);
  }
  pretrain(params, vocab, corpus, pc, &err);
  save_model(params, output);
  vocab.save(vocab_path_for(output));
  const FrozenModel frozen = freeze(std::move(params));
  out << "model " << output.string() << " digest " << std::hex << frozen.digest() << std::dec << " span_steps "
      << frozen.params().recipe.span_corruption_steps << " lm_steps " << frozen.params().recipe.lm_adaptation_steps
      << '\n';
  return kExitOk;
}

struct TuneArgs {
  Common common;
  std::string model, train, dev, metadata, out, metrics, init;
  std::optional<std::size_t> prompt_len, steps, batch_size;
  std::optional<double> range, lr;
  bool sentinel_target = false;
};

void apply_tune_flags(const TuneArgs& a, RunConfig& cfg) {
  if (!a.model.empty()) cfg.model_path = a.model;
  if (!a.train.empty()) cfg.train_data = a.train;
  if (!a.dev.empty()) cfg.dev_data = a.dev;
  if (!a.metadata.empty()) cfg.metadata = a.metadata;
  if (!a.out.empty()) cfg.output = a.out;
  if (!a.init.empty()) cfg.init = parse_init_kind(a.init);
  if (a.prompt_len) cfg.prompt_length = *a.prompt_len;
  if (a.steps) cfg.train.steps = *a.steps;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.range) cfg.init_range = *a.range;
  if (a.lr) cfg.train.learning_rate = *a.lr;
  if (a.sentinel_target) cfg.sentinel_target = true;
}

int cmd_tune(const TuneArgs& a, std::ostream& out, std::ostream&) {
  RunConfig cfg = a.common.load();
  apply_tune_flags(a, cfg);
  const LoadedModel lm = load_frozen(cfg.model_path);
  const TaskData data = load_task(cfg, lm.vocab, true);
  const fs::path output = require_path(cfg.output, "output path");
  const fs::path metrics_path = a.metrics.empty() ? fs::path(output.string() + ".metrics.jsonl") : fs::path(a.metrics);
  std::ofstream metrics(metrics_path);
  if (!metrics) throw InputError("cannot write " + metrics_path.string());
  const TuneResult r = tune_once(cfg, lm.model, lm.vocab, data, cfg.seed, &metrics);
  lm.model.verify();
  save_prompt(r.best, output);
  out << "prompt " << output.string() << " best_step " << r.best_step << " best_metric " << r.best_metric
      << " steps_run " << r.steps_run << '\n';
  return kExitOk;
}

struct SweepArgs {
  TuneArgs tune;
  std::string axis, values, corpus, csv;
  std::size_t seeds = 3;
};

struct CellStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one run
};

CellStats stats(const std::vector<double>& v) {
  CellStats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size() - 1));
  }
  return s;
}

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig base = a.tune.common.load();
  apply_tune_flags(a.tune, base);
  if (a.seeds == 0) throw ConfigError("a sweep needs at least one seed");
  const std::vector<std::string> values = split_list(a.values);
  if (values.empty()) throw ConfigError("no sweep values given");
  if (a.axis != "length" && a.axis != "init" && a.axis != "pretrain" && a.axis != "lm-steps") {
    throw ConfigError("unknown sweep axis '" + a.axis + "' (expected length, init, pretrain or lm-steps)");
  }
  std::ostringstream csv;
  csv.precision(17);
  csv << "axis,value,metric,mean,stddev,runs\n";
  std::optional<LoadedModel> shared;
  if (a.axis != "pretrain") shared = load_frozen(base.model_path);
  for (const std::string& value : values) {
    RunConfig cfg = base;
    std::optional<LoadedModel> cell_model;
    if (a.axis == "length") {
      cfg.prompt_length = RunConfig::parse("version = 1\nprompt.length = " + value + "\n").prompt_length;
    } else if (a.axis == "init") {
      cfg.init = parse_init_kind(value);
    } else if (a.axis == "pretrain") {
      cell_model = load_frozen(value);
    } else {
      const RunConfig steps = RunConfig::parse("version = 1\npretrain.lm_steps = " + value + "\n");
      const Corpus corpus = Corpus::read(require_path(a.corpus.empty() ? cfg.corpus : fs::path(a.corpus), "corpus"));
      ModelParams params = shared->model.params();
      PretrainConfig pc = cfg.pretrain;
      pc.span_steps = 0;
      pc.lm_steps = steps.pretrain.lm_steps;
      pc.seed = cfg.seed;
      pretrain(params, shared->vocab, corpus, pc, nullptr);
      cell_model = LoadedModel{freeze(std::move(params)), shared->vocab};
    }
    const LoadedModel& lm = cell_model ? *cell_model : *shared;
    const TaskData data = load_task(cfg, lm.vocab, true);
    std::vector<double> results;
    for (std::size_t s = 0; s < a.seeds; ++s) {
      const TuneResult r = tune_once(cfg, lm.model, lm.vocab, data, cfg.seed + s, nullptr);
      results.push_back(r.best_metric);
      err << a.axis << '=' << value << " seed " << cfg.seed + s << " best " << r.best_metric << '\n';
    }
    const CellStats st = stats(results);
    const std::string metric = cfg.train.metric.empty() ? "stop_metric" : cfg.train.metric;
    csv << a.axis << ',' << value << ',' << metric << ',' << st.mean << ',' << st.stddev << ',' << results.size()
        << '\n';
  }
  if (a.csv.empty()) {
    out << csv.str();
  } else {
    write_text(a.csv, csv.str());
  }
  return kExitOk;
}

struct EnsembleArgs {
  Common common;
  std::string model, manifest, dev, metadata, json, csv;
};

int cmd_ensemble(const EnsembleArgs& a, std::ostream& out, std::ostream&) {
  RunConfig cfg = a.common.load();
  if (!a.model.empty()) cfg.model_path = a.model;
  if (!a.dev.empty()) cfg.dev_data = a.dev;
  if (!a.metadata.empty()) cfg.metadata = a.metadata;
  const LoadedModel lm = load_frozen(cfg.model_path);
  const EnsembleSpec spec = load_ensemble(require_path(a.manifest, "manifest"), lm.model);
  const TaskData data = load_task(cfg, lm.vocab, false);
  const EnsembleReport report = ensemble_evaluate(lm.model, spec, data.dev, data.task, cfg.train.max_decode_len);
  const std::string csv = ensemble_report_csv(report);
  if (a.csv.empty()) {
    out << csv;
  } else {
    write_text(a.csv, csv);
  }
  const std::string json = ensemble_report_json(report);
  if (a.json.empty()) {
    out << json << '\n';
  } else {
    write_text(a.json, json + "\n");
  }
  return kExitOk;
}

struct InspectArgs {
  std::string model, prompt, metadata;
  std::size_t k = kDefaultNeighbors;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out, std::ostream& err) {
  const LoadedModel lm = load_frozen(a.model);
  const PromptCheckpoint ckpt = load_prompt(require_path(a.prompt, "prompt checkpoint"), lm.model);
  std::vector<std::string> labels;
  if (!a.metadata.empty()) {
    labels = TaskMetadata::read(a.metadata).init_words();
  } else {
    for (const RowProvenance& p : ckpt.prompt.provenance) {
      if (p.source == RowProvenance::Source::kLabel) labels.push_back(p.label);
    }
  }
  const Tensor& e = lm.model.params().embedding;
  const NeighborReport n = nearest_neighbors(ckpt.prompt.matrix, e, lm.vocab, a.k);
  for (const std::string& w : n.warnings) err << "warning: " << w << '\n';
  out << interpret_report_json(ckpt.prompt, n, label_persistence_report(ckpt.prompt, n, labels, lm.vocab),
                               duplication_report(n), lm.vocab)
      << '\n';
  return kExitOk;
}

struct ParamsArgs {
  std::string method = "prompt-tuning", size, lengths;
  bool golden = false;
  std::optional<std::uint64_t> reparam_width, classes, prompt_ids;
};

int cmd_params(const ParamsArgs& a, std::ostream& out, std::ostream&) {
  if (a.golden) {
    out << golden_csv(check_printed_counts());
    return kExitOk;
  }
  std::vector<const ArchConfig*> archs;
  if (a.size.empty()) {
    for (const ArchConfig& arch : t5_sizes()) archs.push_back(&arch);
  } else {
    for (const std::string& s : split_list(a.size)) archs.push_back(&t5_size(s));
  }
  std::vector<std::uint64_t> lengths;
  for (const std::string& l : split_list(a.lengths)) {
    lengths.push_back(RunConfig::parse("version = 1\nprompt.length = " + l + "\n").prompt_length);
  }
  if (lengths.empty()) lengths = kPrintedLengths;
  std::vector<Method> methods;
  if (a.method == "all") {
    methods = all_methods();
  } else {
    for (const std::string& m : split_list(a.method)) methods.push_back(parse_method(m));
  }
  out << params_csv_header(false);
  for (Method m : methods) {
    MethodSpec spec{m};
    if (m == Method::kPrefixTuning) spec.reparam_width = a.reparam_width;
    if (m == Method::kWarp) spec.classes = a.classes;
    if (m == Method::kPromptDesign) spec.prompt_ids = a.prompt_ids;
    for (const ArchConfig* arch : archs) {
      for (std::uint64_t p : lengths) out << params_csv_row(spec, *arch, p);
    }
  }
  return kExitOk;
}

struct ToyArgs {
  std::string out_dir;
  std::uint64_t seed = 1;
  std::size_t documents = 2000, train = 200, dev = 100;
};

int cmd_toy_data(const ToyArgs& a, std::ostream& out, std::ostream&) {
  const fs::path dir = require_path(a.out_dir, "output directory");
  fs::create_directories(dir);
  const Corpus corpus = synthetic_corpus(a.documents, a.seed);
  std::string text;
  for (const Document& d : corpus.documents) text += join_tokens(d) + "\n";
  write_text(dir / "corpus.txt", text);
  const auto train = synthetic_reviews(a.train, a.seed + 1);
  const auto dev = synthetic_reviews(a.dev, a.seed + 2);
  write_tsv(dir / "train.tsv", train);
  write_tsv(dir / "dev.tsv", dev);
  write_text(dir / "reviews.meta", synthetic_review_metadata().render());
  out << "wrote corpus.txt train.tsv dev.tsv reviews.meta to " << dir.string() << '\n';
  return kExitOk;
}

void add_tune_options(CLI::App* sub, TuneArgs& t) {
  add_common(sub, t.common);
  sub->add_option("--model", t.model, "Frozen model checkpoint (vocabulary at <model>.vocab)");
  sub->add_option("--train", t.train, "Training TSV");
  sub->add_option("--dev", t.dev, "Development TSV");
  sub->add_option("--metadata", t.metadata, "Task metadata file");
  sub->add_option("--init", t.init, "random | sampled-vocab | class-label");
  sub->add_option("--prompt-len", t.prompt_len, "Prompt length p");
  sub->add_option("--range", t.range, "Uniform init range r, rows drawn from [-r, r]");
  sub->add_option("--steps", t.steps, "Tuning steps");
  sub->add_option("--batch-size", t.batch_size, "Examples per step");
  sub->add_option("--lr", t.lr, "Adafactor learning rate");
  sub->add_flag("--sentinel-target", t.sentinel_target, "Prefix targets with the first sentinel");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Soft prompt tuning on a frozen encoder-decoder", "ptune"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Pre-train a model on a corpus and save it with its vocabulary");
  add_common(pretrain_cmd, pre.common);
  pretrain_cmd->add_option("--corpus", pre.corpus, "Corpus, one document per line");
  pretrain_cmd->add_option("--out", pre.out, "Model checkpoint to write");
  pretrain_cmd->add_option("--from", pre.from, "Continue from this checkpoint instead of a fresh model");
  pretrain_cmd->add_option("--span-steps", pre.span_steps, "Span-corruption steps");
  pretrain_cmd->add_option("--lm-steps", pre.lm_steps, "LM-adaptation steps after span corruption");

  TuneArgs tune;
  auto* tune_cmd = app.add_subcommand("tune", "Train a prompt against a frozen model");
  add_tune_options(tune_cmd, tune);
  tune_cmd->add_option("--out", tune.out, "Prompt checkpoint to write");
  tune_cmd->add_option("--metrics", tune.metrics, "Metrics JSONL (default <out>.metrics.jsonl)");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Tune over a grid with several seeds per cell; CSV of mean and stddev");
  add_tune_options(sweep_cmd, sweep.tune);
  sweep_cmd->add_option("--axis", sweep.axis, "length | init | pretrain | lm-steps")->required();
  sweep_cmd->add_option("--values", sweep.values, "Comma-separated cell values")->required();
  sweep_cmd->add_option("--seeds", sweep.seeds, "Runs per cell");
  sweep_cmd->add_option("--corpus", sweep.corpus, "Corpus for the lm-steps axis");
  sweep_cmd->add_option("--csv", sweep.csv, "Write the CSV here instead of stdout");

  EnsembleArgs ens;
  auto* ensemble_cmd = app.add_subcommand("ensemble", "Evaluate a prompt ensemble by majority vote");
  add_common(ensemble_cmd, ens.common);
  ensemble_cmd->add_option("--model", ens.model, "Frozen model checkpoint");
  ensemble_cmd->add_option("--manifest", ens.manifest, "Member prompt checkpoints, one per line")->required();
  ensemble_cmd->add_option("--dev", ens.dev, "Evaluation TSV");
  ensemble_cmd->add_option("--metadata", ens.metadata, "Task metadata file");
  ensemble_cmd->add_option("--csv", ens.csv, "Write the CSV here instead of stdout");
  ensemble_cmd->add_option("--json", ens.json, "Write the JSON here instead of stdout");

  InspectArgs insp;
  auto* inspect_cmd = app.add_subcommand("inspect", "Nearest vocabulary neighbors of a learned prompt");
  inspect_cmd->add_option("--model", insp.model, "Frozen model checkpoint")->required();
  inspect_cmd->add_option("--prompt", insp.prompt, "Prompt checkpoint")->required();
  inspect_cmd->add_option("--k", insp.k, "Neighbors per row")->check(CLI::PositiveNumber);
  inspect_cmd->add_option("--metadata", insp.metadata, "Task metadata for label lookups");

  ParamsArgs prm;
  auto* params_cmd = app.add_subcommand("params", "Task-specific parameter counts");
  params_cmd->add_option("--method", prm.method, "Method name, comma list or 'all'");
  params_cmd->add_option("--size", prm.size, "Small, Base, Large, XL or XXL (default all)");
  params_cmd->add_option("--length", prm.lengths, "Comma-separated prompt lengths");
  params_cmd->add_option("--reparam-width", prm.reparam_width, "Prefix-tuning reparameterization width");
  params_cmd->add_option("--classes", prm.classes, "WARP class count");
  params_cmd->add_option("--prompt-ids", prm.prompt_ids, "Prompt-design id count");
  params_cmd->add_flag("--golden", prm.golden, "Compare prompt-tuning counts against the embedded table");

  ToyArgs toy;
  auto* toy_cmd = app.add_subcommand("toy-data", "Write the synthetic corpus and review task");
  toy_cmd->add_option("--out-dir", toy.out_dir, "Output directory")->required();
  toy_cmd->add_option("--seed", toy.seed, "Seed");
  toy_cmd->add_option("--documents", toy.documents, "Corpus documents");
  toy_cmd->add_option("--train", toy.train, "Training examples");
  toy_cmd->add_option("--dev", toy.dev, "Development examples");

  auto* config_cmd = app.add_subcommand("config", "Print the default run config");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (pretrain_cmd->parsed()) return cmd_pretrain(pre, out, err);
    if (tune_cmd->parsed()) return cmd_tune(tune, out, err);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep, out, err);
    if (ensemble_cmd->parsed()) return cmd_ensemble(ens, out, err);
    if (inspect_cmd->parsed()) return cmd_inspect(insp, out, err);
    if (params_cmd->parsed()) return cmd_params(prm, out, err);
    if (toy_cmd->parsed()) return cmd_toy_data(toy, out, err);
    if (config_cmd->parsed()) {
      out << "# ptune run config\n" << RunConfig{}.render();
      return kExitOk;
    }
  } catch (const IdentityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIdentity;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace ptune::cli
