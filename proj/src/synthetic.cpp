#include "ptune/synthetic.hpp"

#include <array>
#include <random>
#include <string_view>

namespace ptune {

namespace {

constexpr std::array<std::string_view, 32> kNouns = {
    "movie", "film",   "story",  "actor", "singer", "book",  "novel",  "song",   "play",   "show",  "garden",
    "river", "city",   "house",  "dog",   "cat",    "child", "teacher", "doctor", "farmer", "ship", "train",
    "road",  "market", "forest", "storm", "letter", "party", "dinner", "school", "village", "king"};
constexpr std::array<std::string_view, 16> kAdjectives = {"old",   "young", "small", "large", "quiet", "busy",
                                                          "green", "dark",  "long",  "short", "early", "late",
                                                          "warm",  "cold",  "red",   "new"};
constexpr std::array<std::string_view, 20> kVerbs = {"saw",    "found", "made",  "took",    "gave",
                                                     "left",   "met",   "heard", "watched", "visited",
                                                     "called", "moved", "built", "opened",  "closed",
                                                     "read",   "wrote", "sold",  "bought",  "painted"};
constexpr std::array<std::string_view, 10> kAdverbs = {"slowly", "quickly", "again",   "today",  "later",
                                                       "often",  "rarely",  "quietly", "gladly", "twice"};
constexpr std::array<std::string_view, 10> kPlaces = {"home",   "town",  "work",  "church", "court",
                                                      "school", "market", "sea", "camp",  "dawn"};
constexpr std::array<std::string_view, 12> kPositive = {"great", "good",   "wonderful", "lovely",   "fun",    "brilliant",
                                                        "superb", "charming", "delightful", "excellent", "moving", "clever"};
constexpr std::array<std::string_view, 12> kNegative = {"bad",     "awful",  "dull",   "boring", "terrible", "poor",
                                                        "clumsy",  "tedious", "weak",  "messy",  "bland",    "dreadful"};
constexpr std::array<std::string_view, 6> kReviewNouns = {"movie", "film", "story", "book", "show", "play"};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& words, std::mt19937_64& rng) {
  return words[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

std::string sentence(std::mt19937_64& rng) {
  std::string s;
  auto add = [&](std::string_view w) {
    if (!s.empty()) s += ' ';
    s += w;
  };
  const bool positive = std::bernoulli_distribution(0.5)(rng);
  auto polar = [&] { return positive ? pick(kPositive, rng) : pick(kNegative, rng); };
  switch (std::uniform_int_distribution<int>(0, 9)(rng)) {
    case 0:
      add("the"), add(pick(kAdjectives, rng)), add(pick(kNouns, rng)), add(pick(kVerbs, rng)), add("the"),
          add(pick(kNouns, rng)), add(pick(kAdverbs, rng));
      break;
    case 1:
      add("a"), add(pick(kNouns, rng)), add("went"), add("to"), add(pick(kPlaces, rng)), add("and"),
          add(pick(kVerbs, rng)), add("a"), add(pick(kAdjectives, rng)), add(pick(kNouns, rng));
      break;
    case 2:
      add("the"), add(pick(kNouns, rng)), add("was"), add(pick(kAdjectives, rng)), add("and"), add("the"),
          add(pick(kNouns, rng)), add("was"), add(pick(kAdjectives, rng));
      break;
    case 3:
      add("we"), add(pick(kVerbs, rng)), add("the"), add(pick(kAdjectives, rng)), add(pick(kNouns, rng)), add("at"),
          add(pick(kPlaces, rng)), add(pick(kAdverbs, rng));
      break;
    case 4:
    case 5:
      add(positive ? "positive" : "negative"), add("review"), add("the"), add(pick(kReviewNouns, rng)), add("was"),
          add(polar()), add("and"), add(polar());
      break;
    case 6:
    case 7:
      add("the"), add(pick(kReviewNouns, rng)), add("was"), add(polar()), add("and"), add(polar()), add("so"),
          add("the"), add("review"), add("was"), add(positive ? "positive" : "negative");
      break;
    case 8:
      add("i"), add("found"), add("the"), add(pick(kReviewNouns, rng)), add(polar());
      break;
    default:
      add("a"), add(polar()), add(pick(kReviewNouns, rng)), add("with"), add("a"), add(polar()),
          add(pick(kNouns, rng));
      break;
  }
  return s;
}

}  // namespace

Corpus synthetic_corpus(std::size_t documents, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Corpus c;
  for (std::size_t d = 0; d < documents; ++d) {
    const int sentences = std::uniform_int_distribution<int>(1, 3)(rng);
    std::string text;
    for (int s = 0; s < sentences; ++s) text += (s ? " " : "") + sentence(rng);
    c.documents.push_back(split_whitespace(text));
  }
  return c;
}

std::vector<TextPair> synthetic_reviews(std::size_t examples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TextPair> out;
  for (std::size_t i = 0; i < examples; ++i) {
    const bool positive = i % 2 == 0;
    auto word = [&] { return std::string(positive ? pick(kPositive, rng) : pick(kNegative, rng)); };
    std::string input;
    switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
      case 0:
        input = "the " + std::string(pick(kReviewNouns, rng)) + " was " + word() + " and " + word();
        break;
      case 1:
        input = "i found the " + std::string(pick(kReviewNouns, rng)) + " " + word();
        break;
      default:
        input = "a " + word() + " " + std::string(pick(kReviewNouns, rng)) + " with a " + word() + " " +
                std::string(pick(kNouns, rng));
        break;
    }
    out.push_back({input, positive ? "positive" : "negative"});
  }
  return out;
}

TaskMetadata synthetic_review_metadata() {
  TaskMetadata m;
  m.name = "reviews";
  m.kind = TaskKind::kClassification;
  m.labels = {"positive", "negative"};
  m.metrics = {std::string(kAccuracy)};
  return m;
}

std::vector<std::string> synthetic_prefixes(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto words = split_whitespace(sentence(rng));
    const std::size_t keep = std::uniform_int_distribution<std::size_t>(2, words.size() - 1)(rng);
    out.push_back(join_tokens(std::span(words).first(keep)));
  }
  return out;
}

}  // namespace ptune
