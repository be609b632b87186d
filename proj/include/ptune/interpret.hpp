#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ptune/prompt.hpp"
#include "ptune/tensor.hpp"
#include "ptune/vocab.hpp"

namespace ptune {

inline constexpr std::size_t kDefaultNeighbors = 5;

struct Neighbor {
  TokenId id = 0;
  double similarity = 0.0;  // cosine; distance is 1 - similarity
  bool operator==(const Neighbor&) const = default;
};

// Cosine similarity as dot / sqrt(|a|^2 |b|^2), so a vector against itself
// scores exactly 1.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Embedding rows (specials excluded) with cached squared norms. Zero-norm
// rows are dropped at construction and listed in skipped().
class NeighborIndex {
 public:
  NeighborIndex(const Tensor& embedding, const Vocabulary& vocab);

  // Top-k by descending similarity, ties by ascending id. Empty for a
  // zero-norm query.
  std::vector<Neighbor> query(std::span<const double> row, std::size_t k) const;

  const std::vector<TokenId>& skipped() const { return skipped_; }

 private:
  const Tensor* embedding_;
  std::vector<TokenId> ids_;
  std::vector<double> norm2_;
  std::vector<TokenId> skipped_;
};

// Reference scan: scores every candidate and fully sorts.
std::vector<Neighbor> exhaustive_neighbors(std::span<const double> row, const Tensor& embedding,
                                           const Vocabulary& vocab, std::size_t k);

struct NeighborReport {
  std::vector<std::vector<Neighbor>> rows;   // empty entry for a skipped row
  std::vector<std::size_t> skipped_rows;     // zero-norm prompt rows
  std::vector<TokenId> skipped_embeddings;   // zero-norm vocabulary rows
  std::vector<std::string> warnings;
};

// Throws ConfigError for k == 0, DimensionError on a width mismatch.
NeighborReport nearest_neighbors(const Tensor& prompt, const Tensor& embedding, const Vocabulary& vocab,
                                 std::size_t k = kDefaultNeighbors);

struct LabelPersistence {
  std::string label;
  std::size_t row = 0;
  bool persisted = false;  // one of the label's tokens is among the row's neighbors
};

struct PersistenceReport {
  std::vector<LabelPersistence> seeded;                    // rows initialized from a label
  std::map<std::string, std::vector<std::size_t>> label_rows;  // rows listing the label as a neighbor
  double rate() const;                                     // persisted / seeded; 0 when nothing was seeded
};

PersistenceReport label_persistence_report(const PromptParams& prompt, const NeighborReport& neighbors,
                                           std::span<const std::string> labels, const Vocabulary& vocab);

struct DuplicationReport {
  std::size_t pairs = 0;  // row pairs compared
  std::vector<std::pair<std::size_t, std::size_t>> duplicates;  // pairs with identical neighbor sets
};

DuplicationReport duplication_report(const NeighborReport& neighbors);

// {rows: [{index, provenance, neighbors: [{token, similarity}]}], duplicates, persistence}
std::string interpret_report_json(const PromptParams& prompt, const NeighborReport& neighbors,
                                  const PersistenceReport& persistence, const DuplicationReport& duplication,
                                  const Vocabulary& vocab);

}  // namespace ptune
