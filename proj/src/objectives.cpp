#include "ptune/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ptune/error.hpp"

namespace ptune {

void SpanCorruptionConfig::validate() const {
  if (!(corruption_rate > 0.0 && corruption_rate < 1.0)) {
    throw ConfigError("corruption rate must lie in (0, 1), got " + std::to_string(corruption_rate));
  }
  if (!(mean_span_length >= 1.0)) {
    throw ConfigError("mean span length must be at least 1, got " + std::to_string(mean_span_length));
  }
}

Text2TextExample corrupt_with_spans(std::span<const TokenId> tokens, std::span<const Span> spans,
                                    const Vocabulary& vocab) {
  std::size_t cursor = 0;
  for (const Span& s : spans) {
    if (s.begin >= s.end) throw SpanError("empty span [" + std::to_string(s.begin) + ", " + std::to_string(s.end) + ")");
    if (s.end > tokens.size()) throw SpanError("span ends past the sequence");
    if (s.begin < cursor) throw SpanError("spans overlap or are unsorted");
    cursor = s.end;
  }
  if (spans.size() + 1 > vocab.num_sentinels()) {
    throw SpanError(std::to_string(spans.size()) + " spans need more than the " +
                    std::to_string(vocab.num_sentinels()) + " allocated sentinels");
  }

  Text2TextExample ex;
  ex.spans.assign(spans.begin(), spans.end());
  cursor = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const Span& s = spans[i];
    ex.input.insert(ex.input.end(), tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                    tokens.begin() + static_cast<std::ptrdiff_t>(s.begin));
    ex.input.push_back(vocab.sentinel(i));
    ex.target.push_back(vocab.sentinel(i));
    ex.target.insert(ex.target.end(), tokens.begin() + static_cast<std::ptrdiff_t>(s.begin),
                     tokens.begin() + static_cast<std::ptrdiff_t>(s.end));
    cursor = s.end;
  }
  ex.input.insert(ex.input.end(), tokens.begin() + static_cast<std::ptrdiff_t>(cursor), tokens.end());
  ex.target.push_back(vocab.sentinel(spans.size()));
  return ex;
}

Text2TextExample sample_span_corruption(std::span<const TokenId> tokens, const SpanCorruptionConfig& cfg,
                                        const Vocabulary& vocab) {
  cfg.validate();
  const std::size_t n = tokens.size();
  if (n < 2) throw SpanError("span corruption needs at least two tokens");
  const auto wanted = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.corruption_rate)));
  if (wanted >= n) throw SpanError("corruption rate would mask every token");
  const std::size_t max_spans = vocab.num_sentinels() == 0 ? 0 : vocab.num_sentinels() - 1;
  if (max_spans == 0) throw SpanError("span corruption needs at least two sentinels");

  std::mt19937_64 rng(cfg.seed);
  std::geometric_distribution<std::size_t> extra(1.0 / cfg.mean_span_length);
  std::vector<Span> spans;
  std::size_t masked = 0;
  constexpr int kMaxAttempts = 1000;
  int attempts = 0;
  while (masked < wanted && spans.size() < max_spans && attempts < kMaxAttempts) {
    ++attempts;
    const std::size_t len = std::min(1 + extra(rng), wanted - masked);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, n - len)(rng);
    const Span cand{start, start + len};
    const bool clash = std::any_of(spans.begin(), spans.end(), [&](const Span& s) {
      return cand.begin <= s.end && s.begin <= cand.end;  // overlapping or touching
    });
    if (clash) continue;
    spans.push_back(cand);
    masked += len;
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  return corrupt_with_spans(tokens, spans, vocab);
}

Text2TextExample make_lm_example(std::span<const TokenId> tokens, std::size_t split_point) {
  if (split_point < 1 || split_point >= tokens.size()) {
    throw SplitError("split point " + std::to_string(split_point) + " must lie in [1, " +
                     std::to_string(tokens.size()) + ")");
  }
  Text2TextExample ex;
  ex.input.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(split_point));
  ex.target.assign(tokens.begin() + static_cast<std::ptrdiff_t>(split_point), tokens.end());
  ex.target.push_back(Vocabulary::kEos);
  return ex;
}

Text2TextExample sample_lm_example(std::span<const TokenId> tokens, std::mt19937_64& rng) {
  if (tokens.size() < 2) throw SplitError("an LM example needs at least two tokens");
  const std::size_t split = std::uniform_int_distribution<std::size_t>(1, tokens.size() - 1)(rng);
  return make_lm_example(tokens, split);
}

Text2TextExample add_sentinel_prefix(Text2TextExample example, const Vocabulary& vocab) {
  if (example.target.empty()) throw LabelError("cannot prefix an empty target");
  example.target.insert(example.target.begin(), vocab.sentinel(0));
  return example;
}

Text2TextExample cast_classification(std::string_view input_text, std::string_view label, const Vocabulary& vocab) {
  Text2TextExample ex;
  ex.input = vocab.encode(input_text);
  if (ex.input.empty()) throw InputError("classification input is empty");
  ex.target = vocab.encode(label);
  if (ex.target.empty() ||
      std::all_of(ex.target.begin(), ex.target.end(), [](TokenId id) { return id == Vocabulary::kUnk; })) {
    throw LabelError("label '" + std::string(label) + "' has no in-vocabulary tokens");
  }
  ex.target.push_back(Vocabulary::kEos);
  return ex;
}

void ensure_eos(Text2TextExample& example) {
  if (example.target.empty() || example.target.back() != Vocabulary::kEos) example.target.push_back(Vocabulary::kEos);
}

}  // namespace ptune
