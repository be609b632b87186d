#include "ptune/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ptune/error.hpp"

namespace ptune {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

Corpus Corpus::from_text(std::string_view text) {
  Corpus corpus;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    Document doc = split_whitespace(line);
    if (!doc.empty()) corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

Corpus Corpus::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read corpus " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  Corpus corpus = from_text(buf.str());
  if (corpus.documents.empty()) throw CorpusError("corpus " + path.string() + " has no documents");
  return corpus;
}

std::string sentinel_display(std::size_t index) {
  static constexpr std::string_view kLetters = "XYZABCDEFGHIJKLMNOPQRSTUVW";
  std::string inner = index < kLetters.size() ? std::string(1, kLetters[index]) : "S" + std::to_string(index);
  return "⟨" + inner + "⟩";
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<std::uint64_t> frequencies,
                       std::size_t num_sentinels)
    : tokens_(std::move(tokens)), frequencies_(std::move(frequencies)), num_sentinels_(num_sentinels) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw VocabularyError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t max_size, std::size_t num_sentinels) {
  if (corpus.documents.empty()) throw CorpusError("cannot build a vocabulary from an empty corpus");
  if (max_size <= num_sentinels + kSpecialCount) {
    throw ConfigError("vocabulary size " + std::to_string(max_size) + " leaves no room for text tokens");
  }
  std::vector<std::string> reserved = {std::string(kPadToken), std::string(kEosToken), std::string(kUnkToken)};
  for (std::size_t i = 0; i < num_sentinels; ++i) reserved.push_back(sentinel_display(i));

  std::map<std::string, std::uint64_t> counts;
  for (const Document& doc : corpus.documents) {
    for (const std::string& tok : doc) {
      if (std::find(reserved.begin(), reserved.end(), tok) == reserved.end()) ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  // counts is already lexicographic, so a stable sort on frequency keeps ties
  // in lexicographic order.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t text_slots = max_size - kSpecialCount - num_sentinels;
  if (ranked.size() > text_slots) ranked.resize(text_slots);

  std::vector<std::string> tokens(reserved.begin(), reserved.begin() + kSpecialCount);
  std::vector<std::uint64_t> freqs(kSpecialCount, 0);
  for (auto& [tok, n] : ranked) {
    tokens.push_back(tok);
    freqs.push_back(n);
  }
  for (std::size_t i = 0; i < num_sentinels; ++i) {
    tokens.push_back(reserved[kSpecialCount + i]);
    freqs.push_back(0);
  }
  return Vocabulary(std::move(tokens), std::move(freqs), num_sentinels);
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return tokens_[id];
}

std::uint64_t Vocabulary::frequency(TokenId id) const {
  token(id);
  return frequencies_[id];
}

TokenId Vocabulary::sentinel(std::size_t index) const {
  if (index >= num_sentinels_) {
    throw VocabularyError("sentinel " + std::to_string(index) + " requested but only " +
                          std::to_string(num_sentinels_) + " are allocated");
  }
  return static_cast<TokenId>(size() - num_sentinels_ + index);
}

bool Vocabulary::is_sentinel(TokenId id) const { return id < size() && id >= size() - num_sentinels_; }

std::vector<TokenId> Vocabulary::common_band(std::size_t k) const {
  k = std::min(k, num_text_tokens());
  std::vector<TokenId> band(k);
  for (std::size_t i = 0; i < k; ++i) band[i] = static_cast<TokenId>(kFirstText + i);
  return band;
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  const std::vector<std::string> tokens = split_whitespace(text);
  return encode(tokens);
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::decode_text(std::span<const TokenId> ids) const {
  const std::vector<std::string> tokens = decode(ids);
  return join_tokens(tokens);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\t' << frequencies_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> freqs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) throw FormatError("malformed vocabulary line: " + line);
    const std::size_t id = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
    if (id != tokens.size()) throw FormatError("vocabulary ids are not dense at line: " + line);
    tokens.push_back(line.substr(0, t1));
    freqs.push_back(std::stoull(line.substr(t2 + 1)));
  }
  if (tokens.size() < kSpecialCount || tokens[kPad] != kPadToken || tokens[kEos] != kEosToken ||
      tokens[kUnk] != kUnkToken) {
    throw FormatError("vocabulary " + path.string() + " lacks the special tokens");
  }
  // Sentinels form the tail block in order ⟨X⟩, ⟨Y⟩, ...; count from the
  // first display-form token onwards.
  std::size_t first = tokens.size();
  for (std::size_t i = kSpecialCount; i < tokens.size(); ++i) {
    if (tokens[i] == sentinel_display(0)) {
      first = i;
      break;
    }
  }
  const std::size_t sentinels = tokens.size() - first;
  for (std::size_t i = 0; i < sentinels; ++i) {
    if (tokens[first + i] != sentinel_display(i)) throw FormatError("sentinel block out of order in " + path.string());
  }
  return Vocabulary(std::move(tokens), std::move(freqs), sentinels);
}

}  // namespace ptune
