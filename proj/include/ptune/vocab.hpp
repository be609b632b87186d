#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ptune/ops.hpp"

namespace ptune {

using Document = std::vector<std::string>;

// Whitespace tokenization of pre-normalized text.
std::vector<std::string> split_whitespace(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

struct Corpus {
  std::vector<Document> documents;

  // One document per non-blank line.
  static Corpus from_text(std::string_view text);
  static Corpus read(const std::filesystem::path& path);
};

// Display form of the i-th sentinel: ⟨X⟩, ⟨Y⟩, ⟨Z⟩, then ⟨A⟩ ... ⟨W⟩, then ⟨S26⟩ ...
std::string sentinel_display(std::size_t index);

// Frequency-ordered vocabulary. Layout: PAD, EOS, UNK at ids 0..2, text
// tokens by descending corpus frequency (ties lexicographic), then the
// sentinel block at the top of the id range.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr TokenId kFirstText = 3;
  static constexpr std::size_t kSpecialCount = 3;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr std::string_view kUnkToken = "<unk>";

  static Vocabulary build(const Corpus& corpus, std::size_t max_size, std::size_t num_sentinels);

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_sentinels() const { return num_sentinels_; }
  std::size_t num_text_tokens() const { return size() - kSpecialCount - num_sentinels_; }

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t frequency(TokenId id) const;

  TokenId sentinel(std::size_t index) const;
  bool is_sentinel(TokenId id) const;
  bool is_special(TokenId id) const { return id < kSpecialCount; }
  bool is_text(TokenId id) const { return id >= kFirstText && id < kFirstText + num_text_tokens(); }

  // The `k` most frequent text tokens, lowest id first.
  std::vector<TokenId> common_band(std::size_t k) const;

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;
  std::string decode_text(std::span<const TokenId> ids) const;

  // "token<TAB>id<TAB>frequency" per line, in id order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && frequencies_ == other.frequencies_ && num_sentinels_ == other.num_sentinels_;
  }

 private:
  Vocabulary(std::vector<std::string> tokens, std::vector<std::uint64_t> frequencies, std::size_t num_sentinels);

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> frequencies_;
  std::size_t num_sentinels_ = 0;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace ptune
