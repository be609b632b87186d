#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "ptune/vocab.hpp"

namespace ptune {

// Half-open token interval [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const Span&) const = default;
};

struct SpanCorruptionConfig {
  double corruption_rate = 0.15;
  double mean_span_length = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Text2TextExample {
  std::vector<TokenId> input;
  std::vector<TokenId> target;
  std::vector<Span> spans;  // set by span corruption, empty otherwise

  bool operator==(const Text2TextExample&) const = default;
};

// Replaces each span with the next sentinel; the target lists every span
// behind its sentinel and closes with one more sentinel. No EOS is appended.
Text2TextExample corrupt_with_spans(std::span<const TokenId> tokens, std::span<const Span> spans,
                                    const Vocabulary& vocab);

// Geometric span lengths with uniform starts. Overlapping or touching spans
// are resampled. Deterministic in (tokens, cfg.seed).
Text2TextExample sample_span_corruption(std::span<const TokenId> tokens, const SpanCorruptionConfig& cfg,
                                        const Vocabulary& vocab);

// Prefix -> continuation + EOS.
Text2TextExample make_lm_example(std::span<const TokenId> tokens, std::size_t split_point);

// Uniform split over [1, len - 1].
Text2TextExample sample_lm_example(std::span<const TokenId> tokens, std::mt19937_64& rng);

Text2TextExample add_sentinel_prefix(Text2TextExample example, const Vocabulary& vocab);

Text2TextExample cast_classification(std::string_view input_text, std::string_view label, const Vocabulary& vocab);

// Appends EOS unless the target already ends with it.
void ensure_eos(Text2TextExample& example);

}  // namespace ptune
