#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ptune/model.hpp"
#include "ptune/objectives.hpp"
#include "ptune/prompt.hpp"
#include "ptune/trainer.hpp"

namespace ptune::cli {

inline constexpr int kRunConfigVersion = 1;

// Versioned `key = value` document. `version` is mandatory and unknown keys
// are rejected.
struct RunConfig {
  int version = kRunConfigVersion;
  std::uint64_t seed = 0;

  std::size_t max_vocab = 512;
  std::size_t sentinels = 8;
  ModelConfig model;  // vocab_size is taken from the built vocabulary

  SpanCorruptionConfig span;
  PretrainConfig pretrain;
  TrainConfig train;
  bool sentinel_target = false;

  InitKind init = InitKind::kClassLabel;
  std::size_t prompt_length = 20;
  double init_range = 0.5;
  std::size_t band = kCommonBandSize;

  std::filesystem::path corpus;
  std::filesystem::path model_path;
  std::filesystem::path train_data;
  std::filesystem::path dev_data;
  std::filesystem::path metadata;
  std::filesystem::path output;

  RunConfig();

  static RunConfig parse(std::string_view text);
  static RunConfig read(const std::filesystem::path& path);
  std::string render() const;
  static const std::vector<std::string>& keys();
};

}  // namespace ptune::cli
