#include "ptune/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ptune/binary_io.hpp"
#include "ptune/error.hpp"
#include "ptune/vocab.hpp"

namespace ptune {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(num_heads, "num_heads");
  positive(encoder_layers, "encoder_layers");
  positive(decoder_layers, "decoder_layers");
  positive(relative_buckets, "relative_buckets");
  positive(relative_max_distance, "relative_max_distance");
  if (d_model % num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(num_heads) +
                      " heads");
  }
}

namespace {

Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor ones(std::size_t n) { return Tensor(Shape{n}, 1.0); }

AttentionWeights init_attention(std::size_t e, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(e));
  AttentionWeights w;
  w.query = normal_matrix(e, e, s, rng);
  w.key = normal_matrix(e, e, s, rng);
  w.value = normal_matrix(e, e, s, rng);
  w.output = normal_matrix(e, e, s, rng);
  return w;
}

FeedForwardWeights init_ffn(std::size_t e, std::size_t f, std::mt19937_64& rng) {
  FeedForwardWeights w;
  w.w_in = normal_matrix(e, 2 * f, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  w.w_out = normal_matrix(f, e, 1.0 / std::sqrt(static_cast<double>(f)), rng);
  return w;
}

template <typename Params, typename Fn>
void visit(Params& p, Fn&& fn) {
  auto attn = [&](const std::string& prefix, auto& a) {
    fn(prefix + ".query", a.query);
    fn(prefix + ".key", a.key);
    fn(prefix + ".value", a.value);
    fn(prefix + ".output", a.output);
  };
  fn(std::string("shared.embedding"), p.embedding);
  fn(std::string("encoder.relative_bias"), p.encoder_bias);
  fn(std::string("decoder.relative_bias"), p.decoder_bias);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    auto& l = p.encoder[i];
    const std::string base = "encoder.layer." + std::to_string(i);
    fn(base + ".self_norm", l.self_norm);
    attn(base + ".self_attention", l.self_attention);
    fn(base + ".ffn_norm", l.ffn_norm);
    fn(base + ".ffn.w_in", l.ffn.w_in);
    fn(base + ".ffn.w_out", l.ffn.w_out);
  }
  fn(std::string("encoder.final_norm"), p.encoder_norm);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    auto& l = p.decoder[i];
    const std::string base = "decoder.layer." + std::to_string(i);
    fn(base + ".self_norm", l.self_norm);
    attn(base + ".self_attention", l.self_attention);
    fn(base + ".cross_norm", l.cross_norm);
    attn(base + ".cross_attention", l.cross_attention);
    fn(base + ".ffn_norm", l.ffn_norm);
    fn(base + ".ffn.w_in", l.ffn.w_in);
    fn(base + ".ffn.w_out", l.ffn.w_out);
  }
  fn(std::string("decoder.final_norm"), p.decoder_norm);
}

}  // namespace

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t e = config.d_model, f = config.d_ff;
  ModelParams p;
  p.config = config;
  p.embedding = normal_matrix(config.vocab_size, e, 1.0, rng);
  p.encoder_bias = normal_matrix(config.relative_buckets, config.num_heads, 0.1, rng);
  p.decoder_bias = normal_matrix(config.relative_buckets, config.num_heads, 0.1, rng);
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    EncoderLayer l;
    l.self_norm = ones(e);
    l.self_attention = init_attention(e, rng);
    l.ffn_norm = ones(e);
    l.ffn = init_ffn(e, f, rng);
    p.encoder.push_back(std::move(l));
  }
  p.encoder_norm = ones(e);
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    DecoderLayer l;
    l.self_norm = ones(e);
    l.self_attention = init_attention(e, rng);
    l.cross_norm = ones(e);
    l.cross_attention = init_attention(e, rng);
    l.ffn_norm = ones(e);
    l.ffn = init_ffn(e, f, rng);
    p.decoder.push_back(std::move(l));
  }
  // Unit-variance embeddings make raw tied logits O(sqrt(e)); start the final
  // gain at e^-1/2 so initial logits are O(1).
  p.decoder_norm = Tensor(Shape{e}, 1.0 / std::sqrt(static_cast<double>(e)));
  return p;
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) { visit(*this, fn); }

void ModelParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit(*this, fn);
}

void ModelParams::set_trainable(bool trainable) {
  for_each([&](const std::string&, Tensor& t) { t.set_trainable(trainable); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::uint64_t parameter_digest(const ModelParams& params) {
  std::uint64_t h = kFnvOffset;
  params.for_each([&](const std::string&, const Tensor& t) { h = fnv1a(t.data(), h); });
  return h;
}

FrozenModel freeze(ModelParams params) {
  params.set_trainable(false);
  FrozenModel m;
  m.digest_ = parameter_digest(params);
  m.params_ = std::make_shared<const ModelParams>(std::move(params));
  return m;
}

void FrozenModel::verify() const {
  const std::uint64_t now = parameter_digest(*params_);
  if (now != digest_) throw IdentityError("frozen model weights changed after freezing");
}

// ---- checkpoint ----

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  ByteWriter w;
  const ModelConfig& c = params.config;
  w.u32(kModelFormatVersion);
  for (std::size_t v : {c.vocab_size, c.d_model, c.d_ff, c.num_heads, c.encoder_layers, c.decoder_layers,
                        c.relative_buckets, c.relative_max_distance}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u64(params.recipe.span_corruption_steps);
  w.u64(params.recipe.lm_adaptation_steps);
  std::uint32_t count = 0;
  params.for_each([&](const std::string&, const Tensor&) { ++count; });
  w.u32(count);
  params.for_each([&](const std::string& name, const Tensor& t) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.f64s(t.data());
  });
  w.u64(parameter_digest(params));
  w.write_file(path);
}

ModelParams load_model(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError(path.string() + ": unsupported model format version " + std::to_string(version));
  }
  ModelConfig c;
  for (std::size_t* v : {&c.vocab_size, &c.d_model, &c.d_ff, &c.num_heads, &c.encoder_layers, &c.decoder_layers,
                         &c.relative_buckets, &c.relative_max_distance}) {
    *v = r.u32();
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  // Shapes come from a freshly built skeleton; the file must match it.
  ModelParams p = ModelParams::initialize(c, 0);
  p.recipe.span_corruption_steps = r.u64();
  p.recipe.lm_adaptation_steps = r.u64();
  std::uint32_t expected = 0;
  p.for_each([&](const std::string&, Tensor&) { ++expected; });
  const std::uint32_t count = r.u32();
  if (count != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " tensors, found " +
                      std::to_string(count));
  }
  p.for_each([&](const std::string& name, Tensor& t) {
    const std::string got = r.str();
    if (got != name) throw FormatError(path.string() + ": expected tensor " + name + ", found " + got);
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape()) {
      throw FormatError(path.string() + ": tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                        shape_string(t.shape()));
    }
    r.f64s(t.data());
  });
  const std::uint64_t stored = r.u64();
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after digest");
  if (stored != parameter_digest(p)) throw FormatError(path.string() + ": digest does not match tensor contents");
  return p;
}

// ---- forward computation ----

namespace {

struct LayerVars {
  Var q, k, v, o;
};

LayerVars attention_vars(Tape& tape, const AttentionWeights& w) {
  return {tape.param(w.query), tape.param(w.key), tape.param(w.value), tape.param(w.output)};
}

Var residual_ffn(Tape& tape, Var x, const Tensor& norm, const FeedForwardWeights& ffn) {
  Var h = rmsnorm(x, tape.param(norm));
  return add(x, geglu(h, tape.param(ffn.w_in), tape.param(ffn.w_out)));
}

}  // namespace

Var embed_ids(Tape& tape, const ModelParams& params, std::span<const TokenId> ids) {
  return embed(tape.param(params.embedding), ids);
}

EncodedBatch encode_batch(Tape& tape, const ModelParams& params, std::span<const EncoderItem> items) {
  const ModelConfig& c = params.config;
  std::vector<Var> parts;
  EncodedBatch out;
  out.offsets.push_back(0);
  for (const EncoderItem& item : items) {
    std::size_t rows = 0;
    if (item.prompt.valid()) {
      const Tensor& pv = item.prompt.value();
      if (pv.rank() != 2 || pv.cols() != c.d_model) {
        throw DimensionError("prompt " + shape_string(pv.shape()) + " does not match model width " +
                             std::to_string(c.d_model));
      }
      parts.push_back(item.prompt);
      rows += pv.rows();
    }
    parts.push_back(embed_ids(tape, params, item.input));
    rows += item.input.size();
    if (rows == 0) throw InputError("encoder input is empty");
    out.offsets.push_back(out.offsets.back() + rows);
  }
  std::vector<AttentionSegment> segments;
  for (std::size_t i = 0; i < items.size(); ++i) {
    segments.push_back({out.offsets[i], out.offsets[i + 1], out.offsets[i], out.offsets[i + 1]});
  }

  Var x = concat_rows(parts);
  const RelativeBias bias{tape.param(params.encoder_bias), true, c.relative_max_distance};
  for (const EncoderLayer& layer : params.encoder) {
    const LayerVars w = attention_vars(tape, layer.self_attention);
    Var h = rmsnorm(x, tape.param(layer.self_norm));
    Var a = attention(matmul(h, w.q), matmul(h, w.k), matmul(h, w.v), segments, c.num_heads, &bias, false);
    x = add(x, matmul(a, w.o));
    x = residual_ffn(tape, x, layer.ffn_norm, layer.ffn);
  }
  out.states = rmsnorm(x, tape.param(params.encoder_norm));
  return out;
}

Var decode_batch(Tape& tape, const ModelParams& params, const EncodedBatch& encoded, std::span<const DecoderItem> items) {
  const ModelConfig& c = params.config;
  std::vector<Var> parts;
  std::vector<AttentionSegment> self_segments, cross_segments;
  std::size_t row = 0;
  for (const DecoderItem& item : items) {
    if (item.source + 1 >= encoded.offsets.size()) throw InputError("decoder item refers to a missing encoder item");
    if (item.tokens.empty()) throw InputError("decoder input is empty");
    parts.push_back(embed_ids(tape, params, item.tokens));
    const std::size_t end = row + item.tokens.size();
    self_segments.push_back({row, end, row, end});
    cross_segments.push_back({row, end, encoded.offsets[item.source], encoded.offsets[item.source + 1]});
    row = end;
  }

  Var y = concat_rows(parts);
  const RelativeBias bias{tape.param(params.decoder_bias), false, c.relative_max_distance};
  for (const DecoderLayer& layer : params.decoder) {
    const LayerVars s = attention_vars(tape, layer.self_attention);
    Var h = rmsnorm(y, tape.param(layer.self_norm));
    Var a = attention(matmul(h, s.q), matmul(h, s.k), matmul(h, s.v), self_segments, c.num_heads, &bias, true);
    y = add(y, matmul(a, s.o));

    const LayerVars x = attention_vars(tape, layer.cross_attention);
    h = rmsnorm(y, tape.param(layer.cross_norm));
    a = attention(matmul(h, x.q), matmul(encoded.states, x.k), matmul(encoded.states, x.v), cross_segments,
                  c.num_heads, nullptr, false);
    y = add(y, matmul(a, x.o));
    y = residual_ffn(tape, y, layer.ffn_norm, layer.ffn);
  }
  y = rmsnorm(y, tape.param(params.decoder_norm));
  return matmul_nt(y, tape.param(params.embedding));
}

std::vector<TokenId> shift_right(std::span<const TokenId> target) {
  std::vector<TokenId> out;
  out.reserve(target.size());
  out.push_back(Vocabulary::kPad);
  if (!target.empty()) out.insert(out.end(), target.begin(), target.end() - 1);
  return out;
}

Var batch_loss(Tape& tape, const ModelParams& params, std::span<const SequencePair> batch) {
  if (batch.empty()) throw InputError("empty training batch");
  std::vector<EncoderItem> enc;
  std::vector<std::vector<TokenId>> dec_inputs;
  std::vector<TokenId> targets;
  for (const SequencePair& s : batch) {
    if (s.target.empty()) throw InputError("empty target sequence");
    enc.push_back({s.prompt, s.input});
    dec_inputs.push_back(shift_right(s.target));
    targets.insert(targets.end(), s.target.begin(), s.target.end());
  }
  std::vector<DecoderItem> dec;
  for (std::size_t i = 0; i < batch.size(); ++i) dec.push_back({i, dec_inputs[i]});
  EncodedBatch encoded = encode_batch(tape, params, enc);
  return cross_entropy(decode_batch(tape, params, encoded, dec), targets);
}

ForwardResult forward(const ModelParams& params, const Tensor* prompt, std::span<const TokenId> input,
                      std::span<const TokenId> target) {
  Tape tape;
  const SequencePair pair{prompt != nullptr ? tape.param(*prompt) : Var{}, input, target};
  if (target.empty()) throw InputError("empty target sequence");
  const std::vector<EncoderItem> enc = {{pair.prompt, input}};
  const std::vector<TokenId> dec_input = shift_right(target);
  const std::vector<DecoderItem> dec = {{0, dec_input}};
  Var logits = decode_batch(tape, params, encode_batch(tape, params, enc), dec);
  Var loss = cross_entropy(logits, target);
  return {logits.value(), loss.value()[0]};
}

namespace {

double log_softmax_at(std::span<const double> row, std::size_t index) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return row[index] - mx - std::log(s);
}

std::vector<EncoderItem> prompt_items(Tape& tape, std::span<const Tensor* const> prompts,
                                      std::span<const TokenId> input) {
  std::vector<EncoderItem> items;
  for (const Tensor* p : prompts) items.push_back({p != nullptr ? tape.param(*p) : Var{}, input});
  return items;
}

}  // namespace

std::vector<std::vector<double>> score_classes_batch(const ModelParams& params, std::span<const Tensor* const> prompts,
                                                     std::span<const TokenId> input,
                                                     std::span<const std::vector<TokenId>> candidates) {
  if (candidates.empty()) throw LabelError("no candidate targets to score");
  for (const auto& cand : candidates) {
    if (cand.empty()) throw LabelError("empty candidate target");
  }
  Tape tape;
  const EncodedBatch encoded = encode_batch(tape, params, prompt_items(tape, prompts, input));
  std::vector<std::vector<TokenId>> dec_inputs;
  for (const auto& cand : candidates) dec_inputs.push_back(shift_right(cand));
  std::vector<DecoderItem> dec;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (const auto& d : dec_inputs) dec.push_back({p, d});
  }
  const Tensor& logits = decode_batch(tape, params, encoded, dec).value();

  std::vector<std::vector<double>> scores(prompts.size(), std::vector<double>(candidates.size(), 0.0));
  std::size_t row = 0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      double total = 0.0;
      for (TokenId t : candidates[c]) total += log_softmax_at(logits.row(row++), t);
      scores[p][c] = total;
    }
  }
  return scores;
}

std::vector<double> score_classes(const ModelParams& params, const Tensor* prompt, std::span<const TokenId> input,
                                  std::span<const std::vector<TokenId>> candidates) {
  const std::vector<const Tensor*> prompts = {prompt};
  return score_classes_batch(params, prompts, input, candidates)[0];
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::vector<TokenId>> greedy_decode_batch(const ModelParams& params, std::span<const Tensor* const> prompts,
                                                      std::span<const TokenId> input, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  Tape tape;
  const EncodedBatch encoded = encode_batch(tape, params, prompt_items(tape, prompts, input));
  std::vector<std::vector<TokenId>> outputs(prompts.size());
  std::vector<bool> done(prompts.size(), false);
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<std::vector<TokenId>> dec_inputs;
    std::vector<std::size_t> active;
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      if (done[p]) continue;
      active.push_back(p);
      std::vector<TokenId> d = {Vocabulary::kPad};
      d.insert(d.end(), outputs[p].begin(), outputs[p].end());
      dec_inputs.push_back(std::move(d));
    }
    if (active.empty()) break;
    std::vector<DecoderItem> dec;
    for (std::size_t i = 0; i < active.size(); ++i) dec.push_back({active[i], dec_inputs[i]});
    const Tensor& logits = decode_batch(tape, params, encoded, dec).value();
    std::size_t row = 0;
    for (std::size_t i = 0; i < active.size(); ++i) {
      row += dec_inputs[i].size();
      const auto next = static_cast<TokenId>(argmax(logits.row(row - 1)));
      outputs[active[i]].push_back(next);
      if (next == Vocabulary::kEos) done[active[i]] = true;
    }
  }
  return outputs;
}

std::vector<TokenId> greedy_decode(const ModelParams& params, const Tensor* prompt, std::span<const TokenId> input,
                                   std::size_t max_len) {
  const std::vector<const Tensor*> prompts = {prompt};
  return greedy_decode_batch(params, prompts, input, max_len)[0];
}

}  // namespace ptune
