#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ptune/autodiff.hpp"
#include "ptune/ops.hpp"
#include "ptune/tensor.hpp"

namespace ptune {

struct ModelConfig {
  std::size_t vocab_size = 512;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t num_heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t relative_buckets = 32;
  std::size_t relative_max_distance = 128;

  void validate() const;  // throws ConfigError
  std::size_t head_dim() const { return d_model / num_heads; }
  bool operator==(const ModelConfig&) const = default;
};

// Which pre-training produced the weights.
struct PretrainRecipe {
  std::uint64_t span_corruption_steps = 0;
  std::uint64_t lm_adaptation_steps = 0;
  bool operator==(const PretrainRecipe&) const = default;
};

struct AttentionWeights {
  Tensor query;   // e x e
  Tensor key;     // e x e
  Tensor value;   // e x e
  Tensor output;  // e x e
};

struct FeedForwardWeights {
  Tensor w_in;   // e x 2f, gate columns first
  Tensor w_out;  // f x e
};

struct EncoderLayer {
  Tensor self_norm;
  AttentionWeights self_attention;
  Tensor ffn_norm;
  FeedForwardWeights ffn;
};

struct DecoderLayer {
  Tensor self_norm;
  AttentionWeights self_attention;
  Tensor cross_norm;
  AttentionWeights cross_attention;
  Tensor ffn_norm;
  FeedForwardWeights ffn;
};

struct ModelParams {
  ModelConfig config;
  PretrainRecipe recipe;
  Tensor embedding;       // V x e, also the output projection
  Tensor encoder_bias;    // buckets x heads
  Tensor decoder_bias;    // buckets x heads
  std::vector<EncoderLayer> encoder;
  Tensor encoder_norm;
  std::vector<DecoderLayer> decoder;
  Tensor decoder_norm;

  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  // Visits every tensor in canonical checkpoint order.
  void for_each(const std::function<void(const std::string& name, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string& name, const Tensor&)>& fn) const;

  void set_trainable(bool trainable);
  std::size_t parameter_count() const;
};

// FNV-1a over the little-endian bytes of every tensor, in canonical order.
std::uint64_t parameter_digest(const ModelParams& params);

// Immutable, shareable weights plus the digest recorded when they were frozen.
class FrozenModel {
 public:
  const ModelParams& params() const { return *params_; }
  const ModelConfig& config() const { return params_->config; }
  std::uint64_t digest() const { return digest_; }
  // Recomputes the digest; throws IdentityError if the weights changed.
  void verify() const;

 private:
  friend FrozenModel freeze(ModelParams params);
  std::shared_ptr<const ModelParams> params_;
  std::uint64_t digest_ = 0;
};

FrozenModel freeze(ModelParams params);
inline FrozenModel freeze(const FrozenModel& model) { return model; }

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const ModelParams& params, const std::filesystem::path& path);
// Throws FormatError on a malformed file or a trailing digest mismatch.
ModelParams load_model(const std::filesystem::path& path);

// ---- Batched computation on a tape ----
//
// A batch stacks every sequence's rows into one matrix and describes each
// attention problem with a segment, so every row is computed exactly as it
// would be alone.

struct EncoderItem {
  Var prompt;  // optional p x e soft prompt; invalid Var means none
  std::span<const TokenId> input;
};

struct EncodedBatch {
  Var states;                        // stacked final encoder states
  std::vector<std::size_t> offsets;  // item i owns rows [offsets[i], offsets[i+1])
};

struct DecoderItem {
  std::size_t source = 0;              // index into the encoded batch
  std::span<const TokenId> tokens;     // teacher-forced decoder inputs
};

EncodedBatch encode_batch(Tape& tape, const ModelParams& params, std::span<const EncoderItem> items);
// Stacked logits for all decoder items, rows in item order.
Var decode_batch(Tape& tape, const ModelParams& params, const EncodedBatch& encoded,
                 std::span<const DecoderItem> items);

// Decoder inputs for teacher forcing: PAD followed by target[0..t-1).
std::vector<TokenId> shift_right(std::span<const TokenId> target);

struct SequencePair {
  Var prompt;
  std::span<const TokenId> input;
  std::span<const TokenId> target;
};

// Mean cross-entropy over every target token of the batch.
Var batch_loss(Tape& tape, const ModelParams& params, std::span<const SequencePair> batch);

// ---- Single-example conveniences ----

Var embed_ids(Tape& tape, const ModelParams& params, std::span<const TokenId> ids);

struct ForwardResult {
  Tensor logits;  // t x V
  double loss = 0.0;
};

ForwardResult forward(const ModelParams& params, const Tensor* prompt, std::span<const TokenId> input,
                      std::span<const TokenId> target);

// Summed log-likelihood of each candidate target. Scores for prompt i are in
// row i; all prompts share one batched pass.
std::vector<std::vector<double>> score_classes_batch(const ModelParams& params, std::span<const Tensor* const> prompts,
                                                     std::span<const TokenId> input,
                                                     std::span<const std::vector<TokenId>> candidates);
std::vector<double> score_classes(const ModelParams& params, const Tensor* prompt, std::span<const TokenId> input,
                                  std::span<const std::vector<TokenId>> candidates);

// Argmax decoding with the lowest id winning ties. Stops after EOS or max_len tokens.
std::vector<std::vector<TokenId>> greedy_decode_batch(const ModelParams& params, std::span<const Tensor* const> prompts,
                                                      std::span<const TokenId> input, std::size_t max_len);
std::vector<TokenId> greedy_decode(const ModelParams& params, const Tensor* prompt, std::span<const TokenId> input,
                                   std::size_t max_len);

// Index of the largest entry; lowest index on ties.
std::size_t argmax(std::span<const double> values);

}  // namespace ptune
