#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ptune/task.hpp"
#include "ptune/vocab.hpp"

namespace ptune {

// Template-grammar English used as the desk-scale pre-training corpus. Each
// document is one to three sentences.
Corpus synthetic_corpus(std::size_t documents, std::uint64_t seed);

// Balanced two-class review task. Every input holds sentiment words of one
// polarity only, so a bag-of-words classifier separates the classes.
std::vector<TextPair> synthetic_reviews(std::size_t examples, std::uint64_t seed);
TaskMetadata synthetic_review_metadata();

// Natural sentence prefixes (no sentinels) for decode probes.
std::vector<std::string> synthetic_prefixes(std::size_t count, std::uint64_t seed);

}  // namespace ptune
