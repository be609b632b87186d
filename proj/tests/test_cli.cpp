#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "run_config.hpp"
#include "ptune/error.hpp"

using namespace ptune;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path kGolden = PTUNE_GOLDEN_DIR;

// Scratch workspace with toy data, a tiny config and a short-trained model.
struct Workspace {
  fs::path dir;

  Workspace() : dir(fs::temp_directory_path() / "ptune_cli_test") {
    fs::remove_all(dir);
    fs::create_directories(dir);
    REQUIRE(run({"toy-data", "--out-dir", (dir / "data").string(), "--documents", "150", "--train", "12", "--dev",
                 "6"})
                .code == 0);
    std::ofstream cfg(dir / "tiny.cfg");
    cfg << "version = 1\nmodel.d_model = 8\nmodel.d_ff = 8\nmodel.num_heads = 2\nmodel.encoder_layers = 1\n"
           "model.decoder_layers = 1\nmodel.relative_buckets = 8\nmodel.relative_max_distance = 16\n"
           "pretrain.span_steps = 10\npretrain.batch_size = 2\ntrain.steps = 4\ntrain.batch_size = 2\n"
           "train.eval_every = 2\nprompt.length = 3\n"
        << "path.train = " << (dir / "data/train.tsv").string() << "\n"
        << "path.dev = " << (dir / "data/dev.tsv").string() << "\n"
        << "path.metadata = " << (dir / "data/reviews.meta").string() << "\n"
        << "path.corpus = " << (dir / "data/corpus.txt").string() << "\n";
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string p(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("run config parsing") {
  const auto cfg = cli::RunConfig::parse("version = 1\n# c\nseed = 7\nprompt.init = random\ntrain.target_metric = 0.9\n");
  CHECK(cfg.seed == 7);
  CHECK(cfg.init == InitKind::kRandomUniform);
  CHECK(cfg.train.target_metric == 0.9);
  CHECK(cli::RunConfig::parse(cfg.render()).render() == cfg.render());
  CHECK_THROWS_AS(cli::RunConfig::parse("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("version = 2\n"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("version = 1\nmodel.width = 3\n"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("version = 1\ntrain.steps = many\n"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("version = 1\nprompt.init = fancy\n"), ConfigError);
}

TEST_CASE("params output matches golden files") {
  const Result golden = run({"params", "--golden"});
  CHECK(golden.code == 0);
  CHECK(golden.out == slurp(kGolden / "params_golden.csv"));
  const Result methods = run({"params", "--method", "all", "--size", "Small,XXL", "--length", "1,100"});
  CHECK(methods.code == 0);
  CHECK(methods.out == slurp(kGolden / "params_methods.csv"));
  CHECK(run({"params", "--size", "Medium"}).code == 2);
  CHECK(run({"params", "--method", "adapters"}).code == 2);
  CHECK(run({"params", "--method", "warp", "--reparam-width", "4"}).code == 0);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"inspect", "--model", "x"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("pipeline: pretrain, tune, ensemble, inspect, sweep") {
  Workspace w;
  const std::string cfg = w.p("tiny.cfg");
  REQUIRE(run({"pretrain", "--config", cfg, "--out", w.p("span.bin")}).code == 0);
  REQUIRE(run({"pretrain", "--config", cfg, "--from", w.p("span.bin"), "--lm-steps", "5", "--out", w.p("lm.bin")})
              .code == 0);
  CHECK(fs::exists(w.p("span.bin.vocab")));
  CHECK(load_model(w.p("lm.bin")).recipe.lm_adaptation_steps == 5);
  CHECK(load_model(w.p("lm.bin")).recipe.span_corruption_steps == 10);

  SUBCASE("missing corpus exits 2") {
    CHECK(run({"pretrain", "--config", cfg, "--corpus", w.p("nope.txt"), "--out", w.p("x.bin")}).code == 2);
  }

  SUBCASE("tune is deterministic and writes stable JSONL") {
    const Result a = run({"tune", "--config", cfg, "--model", w.p("span.bin"), "--out", w.p("a.prompt"), "--seed", "4"});
    const Result b = run({"tune", "--config", cfg, "--model", w.p("span.bin"), "--out", w.p("b.prompt"), "--seed", "4"});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(slurp(w.p("a.prompt")) == slurp(w.p("b.prompt")));
    CHECK(slurp(w.p("a.prompt.metrics.jsonl")) == slurp(w.p("b.prompt.metrics.jsonl")));
    std::istringstream lines(slurp(w.p("a.prompt.metrics.jsonl")));
    std::string line;
    std::vector<std::string> keys;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      const auto j = nlohmann::ordered_json::parse(line);
      keys.clear();
      for (const auto& [k, v] : j.items()) keys.push_back(k);
      CHECK(keys == std::vector<std::string>{"step", "accuracy", "stop_metric", "loss", "train_loss"});
      ++n;
    }
    CHECK(n == 3);
    const Result c =
        run({"tune", "--config", cfg, "--model", w.p("span.bin"), "--out", w.p("c.prompt"), "--init", "random",
             "--range", "0.5", "--prompt-len", "1", "--sentinel-target", "--seed", "5"});
    CHECK(c.code == 0);
    CHECK(load_prompt(w.p("c.prompt")).prompt.length() == 1);
    CHECK(run({"tune", "--config", cfg, "--model", w.p("span.bin"), "--out", w.p("d.prompt"), "--init", "odd"}).code ==
          2);
  }

  SUBCASE("ensemble and inspect") {
    REQUIRE(run({"tune", "--config", cfg, "--model", w.p("span.bin"), "--out", w.p("m1.prompt"), "--seed", "1"}).code ==
            0);
    REQUIRE(run({"tune", "--config", cfg, "--model", w.p("span.bin"), "--out", w.p("m2.prompt"), "--seed", "2"}).code ==
            0);
    {
      std::ofstream m(w.p("members.txt"));
      m << "m1.prompt\nm2.prompt\n";
      std::ofstream one(w.p("one.txt"));
      one << "m1.prompt\n";
      std::ofstream none(w.p("none.txt"));
    }
    const Result e = run({"ensemble", "--config", cfg, "--model", w.p("span.bin"), "--manifest", w.p("members.txt"),
                          "--json", w.p("e.json")});
    REQUIRE(e.code == 0);
    CHECK(e.out.rfind("metric,average,best,ensemble\naccuracy,", 0) == 0);
    const auto j = nlohmann::json::parse(slurp(w.p("e.json")));
    CHECK(j["accuracy"]["members"].size() == 2);
    const Result one = run({"ensemble", "--config", cfg, "--model", w.p("span.bin"), "--manifest", w.p("one.txt"),
                            "--json", w.p("one.json")});
    REQUIRE(one.code == 0);
    const auto oj = nlohmann::json::parse(slurp(w.p("one.json")));
    CHECK(oj["accuracy"]["average"] == oj["accuracy"]["best"]);
    CHECK(oj["accuracy"]["best"] == oj["accuracy"]["ensemble"]);
    CHECK(run({"ensemble", "--config", cfg, "--model", w.p("span.bin"), "--manifest", w.p("none.txt")}).code == 2);
    CHECK(run({"ensemble", "--config", cfg, "--model", w.p("lm.bin"), "--manifest", w.p("members.txt")}).code == 3);

    const Result i = run({"inspect", "--model", w.p("span.bin"), "--prompt", w.p("m1.prompt"), "--k", "3"});
    REQUIRE(i.code == 0);
    const auto ij = nlohmann::json::parse(i.out);
    CHECK(ij["rows"].size() == 3);
    CHECK(ij["rows"][0]["neighbors"].size() == 3);
    CHECK(ij.contains("duplicates"));
    CHECK(ij.contains("persistence"));
    CHECK(run({"inspect", "--model", w.p("lm.bin"), "--prompt", w.p("m1.prompt")}).code == 3);
    CHECK(run({"tune", "--config", cfg, "--model", w.p("lm.bin"), "--out", w.p("m1.prompt.x")}).code == 0);
  }

  SUBCASE("sweep emits one row per cell") {
    const Result s = run({"sweep", "--config", cfg, "--model", w.p("span.bin"), "--axis", "length", "--values", "1,2",
                          "--seeds", "2"});
    REQUIRE(s.code == 0);
    CHECK(s.out.rfind("axis,value,metric,mean,stddev,runs\nlength,1,stop_metric,", 0) == 0);
    CHECK(std::count(s.out.begin(), s.out.end(), '\n') == 3);
    const Result again = run({"sweep", "--config", cfg, "--model", w.p("span.bin"), "--axis", "length", "--values",
                              "1,2", "--seeds", "2"});
    CHECK(again.out == s.out);
    const Result lm = run({"sweep", "--config", cfg, "--model", w.p("span.bin"), "--axis", "lm-steps", "--values",
                           "0,3", "--seeds", "1"});
    CHECK(lm.code == 0);
    const Result pre = run({"sweep", "--config", cfg, "--axis", "pretrain", "--values",
                            w.p("span.bin") + "," + w.p("lm.bin"), "--seeds", "1"});
    CHECK(pre.code == 0);
    CHECK(run({"sweep", "--config", cfg, "--model", w.p("span.bin"), "--axis", "depth", "--values", "1"}).code == 2);
  }
}
