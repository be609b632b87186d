#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "ptune/error.hpp"
#include "ptune/model.hpp"
#include "ptune/vocab.hpp"
#include "test_support.hpp"

using namespace ptune;
using ptune::testing::random_matrix;
using ptune::testing::random_size;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.d_ff = 8;
  c.num_heads = 2;
  c.relative_buckets = 8;
  c.relative_max_distance = 16;
  return c;
}

std::vector<TokenId> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids(n);
  for (auto& t : ids) t = static_cast<TokenId>(random_size(rng, Vocabulary::kFirstText, vocab - 1));
  return ids;
}

Tensor rows_of(const Tensor& table, std::span<const TokenId> ids) {
  Tensor out = Tensor::matrix(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(table.row(ids[i]).begin(), table.row(ids[i]).end(), out.row(i).begin());
  }
  return out;
}

Tensor logits_slice(const Tensor& logits, std::size_t rows) {
  Tensor out = Tensor::matrix(rows, logits.cols());
  for (std::size_t i = 0; i < rows; ++i) std::copy(logits.row(i).begin(), logits.row(i).end(), out.row(i).begin());
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.decoder_layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("embed lookup") {
  const ModelParams p = ModelParams::initialize(tiny_config(), 1);
  Tape tape;
  CHECK(embed_ids(tape, p, std::vector<TokenId>{}).value().shape() == Shape{0, 8});
  const std::vector<TokenId> one = {5};
  CHECK(embed_ids(tape, p, one).value().bitwise_equal(rows_of(p.embedding, one)));
  const std::vector<TokenId> bad = {16};
  CHECK_THROWS_AS(embed_ids(tape, p, bad), VocabularyError);
}

TEST_CASE("embedding gradient is a row-count matrix when E is trainable") {
  ModelParams p = ModelParams::initialize(tiny_config(), 1);
  p.embedding.set_trainable(true);
  Tape tape;
  const std::vector<TokenId> ids = {3, 5, 3, 7};
  GradientRecord g = tape.backward(sum(embed_ids(tape, p, ids)));
  const Tensor& ge = g.at(p.embedding);
  for (std::size_t r = 0; r < ge.rows(); ++r) {
    const double count = static_cast<double>(std::count(ids.begin(), ids.end(), r));
    for (double v : ge.row(r)) CHECK(v == count);
  }
}

TEST_CASE("hard-token equivalence is bitwise") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelParams p = ModelParams::initialize(ModelConfig{}, rng());
    const std::size_t plen = random_size(rng, 1, 8), n = random_size(rng, 0, 16), t = random_size(rng, 1, 4);
    const auto prompt_ids = random_ids(rng, plen, 512);
    const auto input = random_ids(rng, n, 512);
    const auto target = random_ids(rng, t, 512);
    const Tensor prompt = rows_of(p.embedding, prompt_ids);
    std::vector<TokenId> hard = prompt_ids;
    hard.insert(hard.end(), input.begin(), input.end());

    const ForwardResult soft = forward(p, &prompt, input, target);
    const ForwardResult tokens = forward(p, nullptr, hard, target);
    REQUIRE(soft.logits.bitwise_equal(tokens.logits));
    REQUIRE(soft.loss == tokens.loss);
  }
}

TEST_CASE("empty prompt matches the promptless forward") {
  const ModelParams p = ModelParams::initialize(ModelConfig{}, 3);
  const std::vector<TokenId> input = {10, 20, 30}, target = {40, 1};
  const Tensor empty = Tensor::matrix(0, 64);
  CHECK(forward(p, &empty, input, target).logits.bitwise_equal(forward(p, nullptr, input, target).logits));
}

TEST_CASE("forward output normalizes and validates the prompt width") {
  const ModelParams p = ModelParams::initialize(ModelConfig{}, 4);
  const std::vector<TokenId> input = {10, 20, 30}, target = {40, 41, 1};
  const ForwardResult r = forward(p, nullptr, input, target);
  CHECK(r.logits.shape() == Shape{3, 512});
  CHECK(r.logits.all_finite());
  for (std::size_t i = 0; i < r.logits.rows(); ++i) {
    auto row = r.logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx) / z;
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  const Tensor wrong = Tensor::matrix(2, 63);
  CHECK_THROWS_AS(forward(p, &wrong, input, target), DimensionError);
}

TEST_CASE("decoder is causal") {
  const ModelParams p = ModelParams::initialize(ModelConfig{}, 5);
  std::mt19937_64 rng(5);
  const auto input = random_ids(rng, 6, 512);
  for (int trial = 0; trial < 10; ++trial) {
    auto target = random_ids(rng, 6, 512);
    const Tensor base = forward(p, nullptr, input, target).logits;
    const std::size_t i = random_size(rng, 0, 4);
    // Decoder input j is target[j-1]; changing targets past i leaves rows <= i alone.
    for (std::size_t j = i + 1; j < target.size(); ++j) target[j] = static_cast<TokenId>(random_size(rng, 3, 511));
    const Tensor changed = forward(p, nullptr, input, target).logits;
    CHECK(logits_slice(base, i + 1).bitwise_equal(logits_slice(changed, i + 1)));
  }
}

TEST_CASE("batched rows equal single-sequence passes") {
  const ModelParams p = ModelParams::initialize(ModelConfig{}, 6);
  std::mt19937_64 rng(6);
  std::vector<Tensor> prompts;
  for (int i = 0; i < 4; ++i) prompts.push_back(random_matrix(random_size(rng, 0, 5), 64, rng, 0.5));
  const auto input = random_ids(rng, 7, 512);
  const std::vector<std::vector<TokenId>> candidates = {{5, 1}, {6, 7, 1}, {9, 1}};
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : prompts) ptrs.push_back(&t);
  const auto batched = score_classes_batch(p, ptrs, input, candidates);
  const auto decoded = greedy_decode_batch(p, ptrs, input, 4);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto single = score_classes(p, &prompts[i], input, candidates);
    for (std::size_t c = 0; c < candidates.size(); ++c) CHECK(batched[i][c] == single[c]);
    CHECK(decoded[i] == greedy_decode(p, &prompts[i], input, 4));
  }
}

TEST_CASE("score_classes") {
  const ModelParams p = ModelParams::initialize(ModelConfig{}, 7);
  const std::vector<TokenId> input = {11, 12, 13};
  const std::vector<std::vector<TokenId>> same = {{20, 1}, {20, 1}};
  const auto s = score_classes(p, nullptr, input, same);
  CHECK(s[0] == s[1]);
  const std::vector<std::vector<TokenId>> one = {{20, 1}};
  CHECK(score_classes(p, nullptr, input, one).size() == 1);
  CHECK(argmax(score_classes(p, nullptr, input, one)) == 0);
  CHECK_THROWS_AS(score_classes(p, nullptr, input, std::vector<std::vector<TokenId>>{}), LabelError);
  const std::vector<std::vector<TokenId>> blank = {{20}, {}};
  CHECK_THROWS_AS(score_classes(p, nullptr, input, blank), LabelError);

  // Score equals minus the summed cross-entropy of the teacher-forced forward.
  const ForwardResult r = forward(p, nullptr, input, one[0]);
  CHECK(s[0] == doctest::Approx(-r.loss * 2).epsilon(1e-12));
}

TEST_CASE("greedy decoding") {
  const ModelParams p = ModelParams::initialize(ModelConfig{}, 8);
  const std::vector<TokenId> input = {30, 31, 32, 33};
  const auto out = greedy_decode(p, nullptr, input, 6);
  REQUIRE(!out.empty());
  CHECK(out.size() <= 6);
  CHECK(greedy_decode(p, nullptr, input, 6) == out);
  CHECK(greedy_decode(p, nullptr, input, 1).size() == 1);
  CHECK_THROWS_AS(greedy_decode(p, nullptr, input, 0), ConfigError);

  // Self-consistency: teacher forcing the decode reproduces each argmax.
  const Tensor logits = forward(p, nullptr, input, out).logits;
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(argmax(logits.row(i)) == out[i]);

  // Greedy output scores at least as well as changing its first token.
  const std::vector<TokenId> first = {out[0]};
  std::vector<TokenId> other = first;
  other[0] = out[0] == 40 ? 41 : 40;
  const std::vector<std::vector<TokenId>> cands = {first, other};
  const auto s = score_classes(p, nullptr, input, cands);
  CHECK(s[0] >= s[1]);
}

TEST_CASE("greedy decoding repeats a dominant token") {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 9);
  p.for_each([](const std::string&, Tensor& t) { t.fill(0.0); });
  p.for_each([](const std::string& name, Tensor& t) {
    if (name.ends_with("norm")) t.fill(1.0);
  });
  p.embedding.fill(1.0);
  const TokenId dominant = 77;
  for (double& v : p.embedding.row(dominant)) v = 2.0;
  const std::vector<TokenId> input = {5, 6};
  CHECK(greedy_decode(p, nullptr, input, 5) == std::vector<TokenId>(5, dominant));
}

TEST_CASE("freezing") {
  ModelParams raw = ModelParams::initialize(tiny_config(), 10);
  raw.set_trainable(true);
  const std::uint64_t before = parameter_digest(raw);
  const FrozenModel m = freeze(std::move(raw));
  CHECK(m.digest() == before);
  CHECK_NOTHROW(m.verify());
  m.params().for_each([](const std::string&, const Tensor& t) { CHECK_FALSE(t.trainable()); });
  const FrozenModel again = freeze(m);
  CHECK(again.digest() == m.digest());
  CHECK(&again.params() == &m.params());

  // Only the prompt receives a gradient.
  std::mt19937_64 rng(10);
  Tensor prompt = random_matrix(3, 8, rng);
  prompt.set_trainable(true);
  Tape tape;
  const std::vector<TokenId> input = {4, 5, 6}, target = {7, 1};
  const std::vector<SequencePair> batch = {{tape.param(prompt), input, target}};
  GradientRecord g = tape.backward(batch_loss(tape, m.params(), batch));
  CHECK(g.size() == 1);
  CHECK(g.contains(prompt));
  CHECK(g.at(prompt).same_shape(prompt));
  m.params().for_each([&](const std::string&, const Tensor& t) { CHECK_FALSE(g.contains(t)); });
  CHECK(parameter_digest(m.params()) == m.digest());
}

TEST_CASE("checkpoint roundtrip") {
  ModelParams p = ModelParams::initialize(tiny_config(), 12);
  p.recipe = {300, 50};
  const auto path = std::filesystem::temp_directory_path() / "ptune_model_test.bin";
  save_model(p, path);
  ModelParams back = load_model(path);
  CHECK(back.config == p.config);
  CHECK(back.recipe == p.recipe);
  CHECK(parameter_digest(back) == parameter_digest(p));
  CHECK(back.embedding.bitwise_equal(p.embedding));

  // Flip one payload byte: the trailing digest no longer matches.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char c = 0;
    f.read(&c, 1);
    f.seekp(200);
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::filesystem::resize_file(path, 20);
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), InputError);
}
