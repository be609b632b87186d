#include "ptune/prompt.hpp"

#include <algorithm>
#include <cstdio>

#include "ptune/binary_io.hpp"
#include "ptune/error.hpp"
#include "ptune/ops.hpp"

namespace ptune {

std::string to_string(InitKind kind) {
  switch (kind) {
    case InitKind::kRandomUniform:
      return "random";
    case InitKind::kSampledVocab:
      return "sampled-vocab";
    case InitKind::kClassLabel:
      return "class-label";
  }
  return "unknown";
}

InitKind parse_init_kind(std::string_view name) {
  if (name == "random") return InitKind::kRandomUniform;
  if (name == "sampled-vocab") return InitKind::kSampledVocab;
  if (name == "class-label") return InitKind::kClassLabel;
  throw ConfigError("unknown prompt initialization '" + std::string(name) +
                    "' (expected random, sampled-vocab or class-label)");
}

namespace {

void copy_row(const Tensor& embedding, TokenId id, std::span<double> dst) {
  auto src = embedding.row(id);
  std::copy(src.begin(), src.end(), dst.begin());
}

void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw ConfigError(std::string(what) + " must be at least 1");
}

}  // namespace

PromptParams init_random_uniform(std::size_t p, std::size_t e, std::mt19937_64& rng, double range) {
  require_positive(p, "prompt length");
  require_positive(e, "prompt width");
  if (!(range > 0.0)) throw ConfigError("uniform init range must be positive");
  std::uniform_real_distribution<double> dist(-range, range);
  PromptParams out;
  out.kind = InitKind::kRandomUniform;
  out.matrix = Tensor::matrix(p, e);
  for (double& v : out.matrix.data()) v = dist(rng);
  out.matrix.set_trainable(true);
  out.provenance.assign(p, RowProvenance{});
  return out;
}

PromptParams init_sampled_vocab(std::size_t p, const Tensor& embedding, std::span<const TokenId> band,
                                std::mt19937_64& rng) {
  require_positive(p, "prompt length");
  if (band.empty()) throw ConfigError("sampled-vocab init needs a non-empty common band");
  for (TokenId id : band) {
    if (id >= embedding.rows()) throw VocabularyError("band id " + std::to_string(id) + " outside the embedding");
  }
  PromptParams out;
  out.kind = InitKind::kSampledVocab;
  out.matrix = Tensor::matrix(p, embedding.cols());
  std::vector<TokenId> pool(band.begin(), band.end());
  for (std::size_t i = 0; i < p; ++i) {
    TokenId id;
    if (i < pool.size()) {
      // Partial Fisher-Yates: pool[0..i) holds the draws so far.
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
      std::swap(pool[i], pool[j]);
      id = pool[i];
    } else {
      id = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    }
    copy_row(embedding, id, out.matrix.row(i));
    out.provenance.push_back({RowProvenance::Source::kVocab, "", {id}});
  }
  out.matrix.set_trainable(true);
  return out;
}

PromptParams init_sampled_vocab(std::size_t p, const Tensor& embedding, const Vocabulary& vocab, std::size_t band_size,
                                std::mt19937_64& rng) {
  if (band_size == 0) throw ConfigError("common band size must be at least 1");
  if (band_size > vocab.num_text_tokens()) {
    throw ConfigError("common band of " + std::to_string(band_size) + " exceeds the " +
                      std::to_string(vocab.num_text_tokens()) + " text tokens");
  }
  const std::vector<TokenId> band = vocab.common_band(band_size);
  return init_sampled_vocab(p, embedding, band, rng);
}

PromptParams init_class_label(std::size_t p, const Tensor& embedding, std::span<const std::string> labels,
                              const Vocabulary& vocab, std::size_t band_size, std::mt19937_64& rng) {
  require_positive(p, "prompt length");
  if (labels.empty()) throw LabelError("class-label init needs at least one label");
  const std::size_t e = embedding.cols();
  const std::size_t used = std::min(p, labels.size());

  PromptParams out;
  out.kind = InitKind::kClassLabel;
  out.matrix = Tensor::matrix(p, e);
  for (std::size_t i = 0; i < used; ++i) {
    std::vector<TokenId> ids = vocab.encode(labels[i]);
    std::erase(ids, Vocabulary::kUnk);
    if (ids.empty()) throw LabelError("label '" + labels[i] + "' has no in-vocabulary tokens");
    auto row = out.matrix.row(i);
    for (TokenId id : ids) {
      auto src = embedding.row(id);
      for (std::size_t c = 0; c < e; ++c) row[c] += src[c];
    }
    const double n = static_cast<double>(ids.size());
    for (double& v : row) v /= n;
    out.provenance.push_back({RowProvenance::Source::kLabel, labels[i], std::move(ids)});
  }
  if (used < p) {
    PromptParams fill = init_sampled_vocab(p - used, embedding, vocab, band_size, rng);
    for (std::size_t i = 0; i < fill.length(); ++i) {
      std::copy(fill.matrix.row(i).begin(), fill.matrix.row(i).end(), out.matrix.row(used + i).begin());
      out.provenance.push_back(fill.provenance[i]);
    }
  }
  out.matrix.set_trainable(true);
  return out;
}

Var concat_prompt(Var prompt, Var embedded_input) {
  const Tensor& p = prompt.value();
  const Tensor& x = embedded_input.value();
  if (p.cols() != x.cols()) {
    throw DimensionError("prompt " + shape_string(p.shape()) + " and input " + shape_string(x.shape()) +
                         " differ in width");
  }
  return concat_rows(prompt, embedded_input);
}

PromptCheckpoint bind(PromptParams prompt, const FrozenModel& model) {
  if (prompt.width() != model.config().d_model) {
    throw DimensionError("prompt width " + std::to_string(prompt.width()) + " does not match model width " +
                         std::to_string(model.config().d_model));
  }
  return {model.digest(), std::move(prompt)};
}

void require_same_model(const PromptCheckpoint& checkpoint, const FrozenModel& model) {
  if (checkpoint.model_digest != model.digest()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "prompt belongs to model %016llx, not %016llx",
                  static_cast<unsigned long long>(checkpoint.model_digest),
                  static_cast<unsigned long long>(model.digest()));
    throw IdentityError(buf);
  }
}

void save_prompt(const PromptCheckpoint& checkpoint, const std::filesystem::path& path) {
  const PromptParams& p = checkpoint.prompt;
  if (p.provenance.size() != p.length()) throw InputError("prompt provenance does not cover every row");
  ByteWriter w;
  w.u32(kPromptFormatVersion);
  w.u64(checkpoint.model_digest);
  w.u32(static_cast<std::uint32_t>(p.length()));
  w.u32(static_cast<std::uint32_t>(p.width()));
  w.u8(static_cast<std::uint8_t>(p.kind));
  for (const RowProvenance& r : p.provenance) {
    w.u8(static_cast<std::uint8_t>(r.source));
    w.str(r.label);
    w.u32(static_cast<std::uint32_t>(r.ids.size()));
    for (TokenId id : r.ids) w.u32(id);
  }
  w.f64s(p.matrix.data());
  w.u64(fnv1a(w.bytes()));
  w.write_file(path);
}

PromptCheckpoint load_prompt(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  const std::uint32_t version = r.u32();
  if (version != kPromptFormatVersion) {
    throw FormatError(path.string() + ": unsupported prompt format version " + std::to_string(version));
  }
  PromptCheckpoint c;
  c.model_digest = r.u64();
  const std::size_t p = r.u32(), e = r.u32();
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(InitKind::kClassLabel)) throw FormatError(path.string() + ": bad init kind");
  c.prompt.kind = static_cast<InitKind>(kind);
  for (std::size_t i = 0; i < p; ++i) {
    RowProvenance row;
    const std::uint8_t src = r.u8();
    if (src > static_cast<std::uint8_t>(RowProvenance::Source::kLabel)) {
      throw FormatError(path.string() + ": bad provenance source");
    }
    row.source = static_cast<RowProvenance::Source>(src);
    row.label = r.str();
    row.ids.resize(r.u32());
    for (TokenId& id : row.ids) id = r.u32();
    c.prompt.provenance.push_back(std::move(row));
  }
  c.prompt.matrix = Tensor::matrix(p, e);
  r.f64s(c.prompt.matrix.data());
  const std::uint64_t expected = fnv1a(r.consumed());
  if (r.u64() != expected) throw FormatError(path.string() + ": prompt digest mismatch");
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after digest");
  c.prompt.matrix.set_trainable(true);
  return c;
}

PromptCheckpoint load_prompt(const std::filesystem::path& path, const FrozenModel& model) {
  PromptCheckpoint c = load_prompt(path);
  require_same_model(c, model);
  if (c.prompt.width() != model.config().d_model) {
    throw FormatError(path.string() + ": prompt width does not match the model");
  }
  return c;
}

}  // namespace ptune
