#include <filesystem>

#include "doctest.h"
#include "ptune/error.hpp"
#include "ptune/vocab.hpp"

using namespace ptune;

TEST_CASE("frequency ordering and ties") {
  Vocabulary v = Vocabulary::build(Corpus::from_text("a a b"), 10, 3);
  CHECK(v.id("a") < v.id("b"));
  CHECK(v.id("a") == Vocabulary::kFirstText);

  Vocabulary tie = Vocabulary::build(Corpus::from_text("b a"), 10, 3);
  CHECK(tie.id("a") == Vocabulary::kFirstText);
  CHECK(tie.id("b") == Vocabulary::kFirstText + 1);
}

TEST_CASE("sentinel allocation") {
  Vocabulary v = Vocabulary::build(Corpus::from_text("x y z x"), 64, 3);
  CHECK(v.num_sentinels() == 3);
  CHECK(v.size() == 3 + 3 + 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(v.is_sentinel(v.sentinel(i)));
    CHECK_FALSE(v.is_text(v.sentinel(i)));
  }
  CHECK(v.token(v.sentinel(0)) == "⟨X⟩");
  CHECK(v.token(v.sentinel(1)) == "⟨Y⟩");
  CHECK(v.token(v.sentinel(2)) == "⟨Z⟩");
  CHECK_THROWS_AS(v.sentinel(3), VocabularyError);
  for (TokenId id = 0; id < v.size(); ++id) CHECK(v.id(v.token(id)) == id);
}

TEST_CASE("max size truncates the rare tail") {
  Vocabulary v = Vocabulary::build(Corpus::from_text("a a a b b c"), 3 + 2 + 2, 2);
  CHECK(v.num_text_tokens() == 2);
  CHECK(v.id("c") == Vocabulary::kUnk);
}

TEST_CASE("empty corpus is rejected") {
  CHECK_THROWS_AS(Vocabulary::build(Corpus{}, 10, 2), CorpusError);
  CHECK_THROWS_AS(Vocabulary::build(Corpus::from_text("a"), 5, 2), ConfigError);
}

TEST_CASE("encode and decode") {
  Vocabulary v = Vocabulary::build(Corpus::from_text("the cat sat\nthe dog sat"), 32, 4);
  CHECK(v.decode_text(v.encode("the dog sat")) == "the dog sat");
  CHECK(v.encode("zebra") == std::vector<TokenId>{Vocabulary::kUnk});
  CHECK(v.encode("").empty());
  CHECK(v.decode(std::vector<TokenId>{v.sentinel(0)}) == std::vector<std::string>{"⟨X⟩"});
  CHECK_THROWS_AS(v.decode(std::vector<TokenId>{static_cast<TokenId>(v.size())}), VocabularyError);

  // sat=3 the=4 cat=5 dog=6 (sat/the twice, cat/dog once, ties lexicographic)
  const std::vector<TokenId> mixed = {4, v.sentinel(0), 6, v.sentinel(1), 3};
  CHECK(v.decode_text(mixed) == "the ⟨X⟩ dog ⟨Y⟩ sat");
  CHECK(v.encode(v.decode_text(mixed)) == mixed);
}

TEST_CASE("roundtrip and frequency monotonicity over a corpus") {
  Corpus c = Corpus::from_text(
      "one fish two fish\nred fish blue fish\nthis one has a little star\nthis one has a little car\n");
  Vocabulary v = Vocabulary::build(c, 128, 8);
  for (const Document& d : c.documents) CHECK(v.decode(v.encode(d)) == d);
  for (TokenId a = Vocabulary::kFirstText; a + 1 < Vocabulary::kFirstText + v.num_text_tokens(); ++a) {
    CHECK(v.frequency(a) >= v.frequency(a + 1));
  }
  CHECK(v.common_band(3) == Vocabulary::build(c, 128, 8).common_band(3));
  CHECK(v.token(v.common_band(1)[0]) == "fish");
}

TEST_CASE("vocabulary export roundtrip") {
  Vocabulary v = Vocabulary::build(Corpus::from_text("b a a c"), 16, 3);
  const auto path = std::filesystem::temp_directory_path() / "ptune_vocab_test.tsv";
  v.save(path);
  Vocabulary back = Vocabulary::load(path);
  CHECK(back == v);
  CHECK(back.num_sentinels() == 3);
  std::filesystem::remove(path);
}
