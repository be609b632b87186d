#include "ptune/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

#include "json.hpp"
#include "ptune/error.hpp"

namespace ptune {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine_from(double d, double na2, double nb2) {
  return std::clamp(d / std::sqrt(na2 * nb2), -1.0, 1.0);
}

// Higher similarity first, then lower id.
bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

std::vector<TokenId> candidate_ids(const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (TokenId id = Vocabulary::kSpecialCount; id < vocab.size(); ++id) ids.push_back(id);
  return ids;
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine of vectors with different lengths");
  return cosine_from(dot(a, b), dot(a, a), dot(b, b));
}

NeighborIndex::NeighborIndex(const Tensor& embedding, const Vocabulary& vocab) : embedding_(&embedding) {
  if (embedding.rows() != vocab.size()) {
    throw DimensionError("embedding has " + std::to_string(embedding.rows()) + " rows for a vocabulary of " +
                         std::to_string(vocab.size()));
  }
  for (TokenId id : candidate_ids(vocab)) {
    const double n2 = dot(embedding.row(id), embedding.row(id));
    if (n2 == 0.0) {
      skipped_.push_back(id);
      continue;
    }
    ids_.push_back(id);
    norm2_.push_back(n2);
  }
}

std::vector<Neighbor> NeighborIndex::query(std::span<const double> row, std::size_t k) const {
  if (row.size() != embedding_->cols()) throw DimensionError("query width does not match the embedding");
  const double q2 = dot(row, row);
  if (q2 == 0.0 || k == 0) return {};
  // Max-heap on rank keeps the worst of the current top-k on top.
  auto worse = [](const Neighbor& a, const Neighbor& b) { return ranks_before(a, b); };
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const Neighbor n{ids_[i], cosine_from(dot(row, embedding_->row(ids_[i])), q2, norm2_[i])};
    if (heap.size() < k) {
      heap.push(n);
    } else if (ranks_before(n, heap.top())) {
      heap.pop();
      heap.push(n);
    }
  }
  std::vector<Neighbor> out;
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<Neighbor> exhaustive_neighbors(std::span<const double> row, const Tensor& embedding,
                                           const Vocabulary& vocab, std::size_t k) {
  std::vector<Neighbor> all;
  for (TokenId id : candidate_ids(vocab)) {
    const auto e = embedding.row(id);
    if (dot(e, e) == 0.0 || dot(row, row) == 0.0) continue;
    all.push_back({id, cosine_similarity(row, e)});
  }
  std::sort(all.begin(), all.end(), ranks_before);
  if (all.size() > k) all.resize(k);
  return all;
}

NeighborReport nearest_neighbors(const Tensor& prompt, const Tensor& embedding, const Vocabulary& vocab,
                                 std::size_t k) {
  if (k == 0) throw ConfigError("k must be at least 1");
  if (prompt.cols() != embedding.cols()) {
    throw DimensionError("prompt width " + std::to_string(prompt.cols()) + " does not match embedding width " +
                         std::to_string(embedding.cols()));
  }
  const NeighborIndex index(embedding, vocab);
  NeighborReport report;
  report.skipped_embeddings = index.skipped();
  for (TokenId id : index.skipped()) {
    report.warnings.push_back("vocabulary row " + vocab.token(id) + " has zero norm and is excluded");
  }
  for (std::size_t r = 0; r < prompt.rows(); ++r) {
    report.rows.push_back(index.query(prompt.row(r), k));
    if (report.rows.back().empty()) {
      report.skipped_rows.push_back(r);
      report.warnings.push_back("prompt row " + std::to_string(r) + " has zero norm and is excluded");
    }
  }
  return report;
}

double PersistenceReport::rate() const {
  if (seeded.empty()) return 0.0;
  const auto hits = std::count_if(seeded.begin(), seeded.end(), [](const LabelPersistence& l) { return l.persisted; });
  return static_cast<double>(hits) / static_cast<double>(seeded.size());
}

PersistenceReport label_persistence_report(const PromptParams& prompt, const NeighborReport& neighbors,
                                           std::span<const std::string> labels, const Vocabulary& vocab) {
  if (neighbors.rows.size() != prompt.length()) throw DimensionError("neighbor report does not match the prompt");
  auto has_any = [](const std::vector<Neighbor>& ns, std::span<const TokenId> ids) {
    return std::any_of(ns.begin(), ns.end(), [&](const Neighbor& n) {
      return std::find(ids.begin(), ids.end(), n.id) != ids.end();
    });
  };
  PersistenceReport report;
  for (std::size_t r = 0; r < prompt.provenance.size(); ++r) {
    const RowProvenance& pr = prompt.provenance[r];
    if (pr.source != RowProvenance::Source::kLabel) continue;
    report.seeded.push_back({pr.label, r, has_any(neighbors.rows[r], pr.ids)});
  }
  for (const std::string& label : labels) {
    std::vector<TokenId> ids;
    for (TokenId id : vocab.encode(label)) {
      if (id != Vocabulary::kUnk) ids.push_back(id);
    }
    auto& rows = report.label_rows[label];
    for (std::size_t r = 0; r < neighbors.rows.size(); ++r) {
      if (has_any(neighbors.rows[r], ids)) rows.push_back(r);
    }
  }
  return report;
}

DuplicationReport duplication_report(const NeighborReport& neighbors) {
  std::vector<std::set<TokenId>> sets;
  for (const auto& row : neighbors.rows) {
    std::set<TokenId> s;
    for (const Neighbor& n : row) s.insert(n.id);
    sets.push_back(std::move(s));
  }
  DuplicationReport report;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].empty()) continue;
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      if (sets[j].empty()) continue;
      ++report.pairs;
      if (sets[i] == sets[j]) report.duplicates.emplace_back(i, j);
    }
  }
  return report;
}

namespace {

std::string provenance_string(const RowProvenance& p, const Vocabulary& vocab) {
  switch (p.source) {
    case RowProvenance::Source::kVocab:
      return "vocab:" + (p.ids.empty() ? std::string() : vocab.token(p.ids.front()));
    case RowProvenance::Source::kLabel:
      return "label:" + p.label;
    case RowProvenance::Source::kRandom:
      break;
  }
  return "random";
}

}  // namespace

std::string interpret_report_json(const PromptParams& prompt, const NeighborReport& neighbors,
                                  const PersistenceReport& persistence, const DuplicationReport& duplication,
                                  const Vocabulary& vocab) {
  using json = nlohmann::ordered_json;
  json rows = json::array();
  for (std::size_t r = 0; r < neighbors.rows.size(); ++r) {
    json ns = json::array();
    for (const Neighbor& n : neighbors.rows[r]) ns.push_back({{"token", vocab.token(n.id)}, {"similarity", n.similarity}});
    rows.push_back({{"index", r},
                    {"provenance", r < prompt.provenance.size() ? provenance_string(prompt.provenance[r], vocab)
                                                                : std::string("random")},
                    {"neighbors", std::move(ns)}});
  }
  json dup_pairs = json::array();
  for (const auto& [a, b] : duplication.duplicates) dup_pairs.push_back({a, b});
  json seeded = json::array();
  for (const LabelPersistence& l : persistence.seeded) {
    seeded.push_back({{"label", l.label}, {"row", l.row}, {"persisted", l.persisted}});
  }
  json label_rows = json::object();
  for (const auto& [label, rs] : persistence.label_rows) label_rows[label] = rs;
  json out;
  out["rows"] = std::move(rows);
  out["duplicates"] = {{"pairs", duplication.pairs}, {"duplicate_pairs", std::move(dup_pairs)}};
  out["persistence"] = {{"rate", persistence.rate()}, {"seeded", std::move(seeded)}, {"label_rows", std::move(label_rows)}};
  out["warnings"] = neighbors.warnings;
  return out.dump(2);
}

}  // namespace ptune
