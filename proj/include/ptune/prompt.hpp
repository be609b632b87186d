#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ptune/autodiff.hpp"
#include "ptune/model.hpp"
#include "ptune/tensor.hpp"
#include "ptune/vocab.hpp"

namespace ptune {

enum class InitKind : std::uint8_t { kRandomUniform = 0, kSampledVocab = 1, kClassLabel = 2 };

std::string to_string(InitKind kind);
InitKind parse_init_kind(std::string_view name);  // "random" | "sampled-vocab" | "class-label"

// Where a prompt row came from.
struct RowProvenance {
  enum class Source : std::uint8_t { kRandom = 0, kVocab = 1, kLabel = 2 };
  Source source = Source::kRandom;
  std::string label;          // kLabel only
  std::vector<TokenId> ids;   // seeding ids (one for kVocab, the label's ids for kLabel)

  bool operator==(const RowProvenance&) const = default;
};

struct PromptParams {
  Tensor matrix;  // p x e, trainable
  InitKind kind = InitKind::kRandomUniform;
  std::vector<RowProvenance> provenance;  // one entry per row

  std::size_t length() const { return matrix.rows(); }
  std::size_t width() const { return matrix.cols(); }
};

PromptParams init_random_uniform(std::size_t p, std::size_t e, std::mt19937_64& rng, double range = 0.5);

// Rows copy E[id] for ids drawn from `band` without replacement, then with
// replacement once the band is exhausted.
PromptParams init_sampled_vocab(std::size_t p, const Tensor& embedding, std::span<const TokenId> band,
                                std::mt19937_64& rng);
// Band = the `band_size` most frequent text tokens of `vocab`.
PromptParams init_sampled_vocab(std::size_t p, const Tensor& embedding, const Vocabulary& vocab,
                                std::size_t band_size, std::mt19937_64& rng);

// Row i < |labels| is the mean embedding of label i's in-vocabulary tokens;
// remaining rows come from init_sampled_vocab.
PromptParams init_class_label(std::size_t p, const Tensor& embedding, std::span<const std::string> labels,
                              const Vocabulary& vocab, std::size_t band_size, std::mt19937_64& rng);

// Band size cap; callers clamp it to the number of text tokens.
inline constexpr std::size_t kCommonBandSize = 5000;

Var concat_prompt(Var prompt, Var embedded_input);

inline std::size_t prompt_param_cost(std::size_t p, std::size_t e) { return p * e; }

// A prompt bound to the frozen model it was trained against.
struct PromptCheckpoint {
  std::uint64_t model_digest = 0;
  PromptParams prompt;
};

PromptCheckpoint bind(PromptParams prompt, const FrozenModel& model);
// Throws IdentityError unless the checkpoint belongs to `model`.
void require_same_model(const PromptCheckpoint& checkpoint, const FrozenModel& model);

inline constexpr std::uint32_t kPromptFormatVersion = 1;

void save_prompt(const PromptCheckpoint& checkpoint, const std::filesystem::path& path);
// Throws FormatError on a malformed file.
PromptCheckpoint load_prompt(const std::filesystem::path& path);
// Also throws IdentityError if the checkpoint was trained against another model.
PromptCheckpoint load_prompt(const std::filesystem::path& path, const FrozenModel& model);

}  // namespace ptune
