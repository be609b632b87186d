#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>

#include "ptune/error.hpp"
#include "ptune/task.hpp"

namespace ptune::cli {

namespace {

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// `ref` maps a config (const or not) to the member it edits.
template <typename Ref>
Field uint_at(Ref ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) {
            auto& slot = ref(c);
            slot = static_cast<std::remove_reference_t<decltype(slot)>>(to_uint(k, v));
          },
          [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <typename Ref>
Field double_at(Ref ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = to_double(k, v); },
          [ref](const RunConfig& c) { return num(ref(c)); }};
}

template <typename Ref>
Field path_at(Ref ref) {
  return {[ref](RunConfig& c, const std::string&, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) { return ref(c).string(); }};
}

#define PTUNE_REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"version", uint_at(PTUNE_REF(version))},
      {"seed", uint_at(PTUNE_REF(seed))},
      {"model.max_vocab", uint_at(PTUNE_REF(max_vocab))},
      {"model.sentinels", uint_at(PTUNE_REF(sentinels))},
      {"model.d_model", uint_at(PTUNE_REF(model.d_model))},
      {"model.d_ff", uint_at(PTUNE_REF(model.d_ff))},
      {"model.num_heads", uint_at(PTUNE_REF(model.num_heads))},
      {"model.encoder_layers", uint_at(PTUNE_REF(model.encoder_layers))},
      {"model.decoder_layers", uint_at(PTUNE_REF(model.decoder_layers))},
      {"model.relative_buckets", uint_at(PTUNE_REF(model.relative_buckets))},
      {"model.relative_max_distance", uint_at(PTUNE_REF(model.relative_max_distance))},
      {"span.corruption_rate", double_at(PTUNE_REF(span.corruption_rate))},
      {"span.mean_span_length", double_at(PTUNE_REF(span.mean_span_length))},
      {"pretrain.span_steps", uint_at(PTUNE_REF(pretrain.span_steps))},
      {"pretrain.lm_steps", uint_at(PTUNE_REF(pretrain.lm_steps))},
      {"pretrain.batch_size", uint_at(PTUNE_REF(pretrain.batch_size))},
      {"pretrain.learning_rate", double_at(PTUNE_REF(pretrain.learning_rate))},
      {"pretrain.max_length", uint_at(PTUNE_REF(pretrain.max_length))},
      {"train.steps", uint_at(PTUNE_REF(train.steps))},
      {"train.batch_size", uint_at(PTUNE_REF(train.batch_size))},
      {"train.learning_rate", double_at(PTUNE_REF(train.learning_rate))},
      {"train.weight_decay", double_at(PTUNE_REF(train.adafactor.weight_decay))},
      {"train.eval_every", uint_at(PTUNE_REF(train.eval_every))},
      {"train.max_decode_len", uint_at(PTUNE_REF(train.max_decode_len))},
      {"train.metric", {[](RunConfig& c, const std::string&, const std::string& v) { c.train.metric = v; },
                        [](const RunConfig& c) { return c.train.metric; }}},
      {"train.target_metric",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v.empty()) {
            c.train.target_metric.reset();
          } else {
            c.train.target_metric = to_double(k, v);
          }
        },
        [](const RunConfig& c) { return c.train.target_metric ? num(*c.train.target_metric) : std::string(); }}},
      {"train.sentinel_target",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.sentinel_target = to_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.sentinel_target ? "true" : "false"); }}},
      {"prompt.init", {[](RunConfig& c, const std::string&, const std::string& v) { c.init = parse_init_kind(v); },
                       [](const RunConfig& c) { return to_string(c.init); }}},
      {"prompt.length", uint_at(PTUNE_REF(prompt_length))},
      {"prompt.range", double_at(PTUNE_REF(init_range))},
      {"prompt.band", uint_at(PTUNE_REF(band))},
      {"path.corpus", path_at(PTUNE_REF(corpus))},
      {"path.model", path_at(PTUNE_REF(model_path))},
      {"path.train", path_at(PTUNE_REF(train_data))},
      {"path.dev", path_at(PTUNE_REF(dev_data))},
      {"path.metadata", path_at(PTUNE_REF(metadata))},
      {"path.output", path_at(PTUNE_REF(output))},
  };
  return table;
}

#undef PTUNE_REF

}  // namespace

RunConfig::RunConfig() {
  pretrain.span_steps = 5000;
  pretrain.lm_steps = 0;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }();
  return names;
}

RunConfig RunConfig::parse(std::string_view text) {
  std::map<std::string, const Field*> by_key;
  for (const auto& [k, f] : fields()) by_key[k] = &f;
  RunConfig cfg;
  bool saw_version = false;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second->set(cfg, key, value);
    if (key == "version") saw_version = true;
  }
  if (!saw_version) throw ConfigError("config is missing the mandatory 'version' key");
  if (cfg.version != kRunConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(cfg.version) + " (expected " +
                      std::to_string(kRunConfigVersion) + ")");
  }
  return cfg;
}

RunConfig RunConfig::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::render() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

}  // namespace ptune::cli
