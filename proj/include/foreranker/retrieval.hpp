#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "foreranker/corpus.hpp"

namespace foreranker {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct PoolDocument {
  std::string doc_id;
  Tokens tokens;
};

struct Posting {
  std::uint32_t doc;  // dense index into the sorted doc-id table
  std::uint32_t tf;
};

/// Immutable Okapi BM25 index. Documents are stored in ascending doc_id order
/// so postings and tie-breaks share one total order.
class InvertedIndex {
 public:
  /// Throws InputError on an empty pool or a duplicate doc_id.
  explicit InvertedIndex(std::span<const PoolDocument> pool);

  std::size_t num_docs() const { return doc_ids_.size(); }
  double average_length() const { return avg_length_; }
  std::size_t doc_length(const std::string& doc_id) const;
  std::size_t document_frequency(const std::string& term) const;
  std::size_t term_frequency(const std::string& term, const std::string& doc_id) const;
  const std::vector<Posting>* postings(const std::string& term) const;
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }

  double idf(const std::string& term) const;
  double score(std::span<const std::string> query, const std::string& doc_id,
               Bm25Params params = {}) const;

  /// Top-n by score, ties by ascending doc_id. A `must_include` doc missing
  /// from the top n replaces the last entry.
  std::vector<std::string> retrieve(std::span<const std::string> query, std::size_t n,
                                    const std::optional<std::string>& must_include = std::nullopt,
                                    Bm25Params params = {}) const;

  /// Scores for every indexed document, in doc_ids() order.
  std::vector<double> score_all(std::span<const std::string> query, Bm25Params params = {}) const;

 private:
  std::size_t dense_index(const std::string& doc_id) const;
  double score_dense(std::span<const std::string> query, std::size_t doc, Bm25Params params) const;

  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> lengths_;
  std::unordered_map<std::string, std::uint32_t> doc_lookup_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  double avg_length_ = 0.0;
};

/// Unique candidate documents across a corpus, first occurrence wins.
std::vector<PoolDocument> document_pool(std::span<const Session> sessions);

}  // namespace foreranker
