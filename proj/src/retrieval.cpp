#include "foreranker/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "foreranker/errors.hpp"

namespace foreranker {

InvertedIndex::InvertedIndex(std::span<const PoolDocument> pool) {
  if (pool.empty()) throw InputError("cannot index an empty document pool");

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pool[a].doc_id < pool[b].doc_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (pool[order[i]].doc_id == pool[order[i - 1]].doc_id) {
      throw InputError("duplicate doc_id in pool: " + pool[order[i]].doc_id);
    }
  }

  doc_ids_.reserve(pool.size());
  lengths_.reserve(pool.size());
  std::uint64_t total = 0;
  for (std::size_t dense = 0; dense < order.size(); ++dense) {
    const auto& doc = pool[order[dense]];
    doc_ids_.push_back(doc.doc_id);
    doc_lookup_.emplace(doc.doc_id, static_cast<std::uint32_t>(dense));
    lengths_.push_back(static_cast<std::uint32_t>(doc.tokens.size()));
    total += doc.tokens.size();

    std::unordered_map<std::string, std::uint32_t> tf;
    for (const auto& t : doc.tokens) ++tf[t];
    for (const auto& [term, count] : tf) {
      // Documents arrive in ascending dense order, so postings stay sorted.
      postings_[term].push_back({static_cast<std::uint32_t>(dense), count});
    }
  }
  avg_length_ = static_cast<double>(total) / static_cast<double>(doc_ids_.size());
}

std::size_t InvertedIndex::dense_index(const std::string& doc_id) const {
  auto it = doc_lookup_.find(doc_id);
  if (it == doc_lookup_.end()) throw InputError("doc_id not indexed: " + doc_id);
  return it->second;
}

std::size_t InvertedIndex::doc_length(const std::string& doc_id) const {
  return lengths_[dense_index(doc_id)];
}

const std::vector<Posting>* InvertedIndex::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

std::size_t InvertedIndex::document_frequency(const std::string& term) const {
  const auto* p = postings(term);
  return p ? p->size() : 0;
}

std::size_t InvertedIndex::term_frequency(const std::string& term, const std::string& doc_id) const {
  const auto dense = static_cast<std::uint32_t>(dense_index(doc_id));
  const auto* p = postings(term);
  if (!p) return 0;
  auto it = std::lower_bound(p->begin(), p->end(), dense,
                             [](const Posting& post, std::uint32_t d) { return post.doc < d; });
  return (it != p->end() && it->doc == dense) ? it->tf : 0;
}

double InvertedIndex::idf(const std::string& term) const {
  const double n = static_cast<double>(num_docs());
  const double df = static_cast<double>(document_frequency(term));
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double InvertedIndex::score_dense(std::span<const std::string> query, std::size_t doc,
                                  Bm25Params params) const {
  const double norm =
      params.k1 * (1.0 - params.b + params.b * static_cast<double>(lengths_[doc]) / avg_length_);
  double total = 0.0;
  // Repeated query terms count once per occurrence.
  for (const auto& term : query) {
    const auto* p = postings(term);
    if (!p) continue;
    auto it = std::lower_bound(p->begin(), p->end(), static_cast<std::uint32_t>(doc),
                               [](const Posting& post, std::uint32_t d) { return post.doc < d; });
    if (it == p->end() || it->doc != doc) continue;
    const double tf = it->tf;
    total += idf(term) * tf * (params.k1 + 1.0) / (tf + norm);
  }
  return total;
}

double InvertedIndex::score(std::span<const std::string> query, const std::string& doc_id,
                            Bm25Params params) const {
  return score_dense(query, dense_index(doc_id), params);
}

std::vector<double> InvertedIndex::score_all(std::span<const std::string> query,
                                             Bm25Params params) const {
  std::vector<double> scores(num_docs(), 0.0);
  for (const auto& term : query) {
    const auto* p = postings(term);
    if (!p) continue;
    const double w = idf(term);
    for (const auto& post : *p) {
      const double norm = params.k1 * (1.0 - params.b +
                                       params.b * static_cast<double>(lengths_[post.doc]) / avg_length_);
      const double tf = post.tf;
      scores[post.doc] += w * tf * (params.k1 + 1.0) / (tf + norm);
    }
  }
  return scores;
}

std::vector<std::string> InvertedIndex::retrieve(std::span<const std::string> query, std::size_t n,
                                                 const std::optional<std::string>& must_include,
                                                 Bm25Params params) const {
  if (n == 0) throw InputError("retrieve needs n >= 1");
  const auto scores = score_all(query, params);
  std::vector<std::uint32_t> order(num_docs());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(n, order.size());
  // Dense order is doc_id order, so the index breaks ties.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<std::string> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(doc_ids_[order[i]]);

  if (must_include) {
    dense_index(*must_include);
    if (std::find(out.begin(), out.end(), *must_include) == out.end()) out.back() = *must_include;
  }
  return out;
}

std::vector<PoolDocument> document_pool(std::span<const Session> sessions) {
  std::vector<PoolDocument> pool;
  std::unordered_set<std::string> seen;
  for (const auto& s : sessions) {
    for (const auto& turn : s.turns) {
      for (const auto& doc : turn.candidates) {
        if (seen.insert(doc.doc_id).second) pool.push_back({doc.doc_id, doc.tokens});
      }
    }
  }
  return pool;
}

}  // namespace foreranker
