#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "foreranker/corpus.hpp"
#include "foreranker/retrieval.hpp"

namespace foreranker {

/// Parameters of the synthetic session-log model.
///
/// Each intent owns a set of specific words and belongs to a cluster whose
/// words are shared with its sibling intents. Queries mix specific, cluster
/// and background words; the share of specific words grows with the turn
/// index, so later turns identify the intent more reliably than earlier ones.
/// Candidate lists hold one document of the active intent and N-1 documents
/// of other intents, partly retrieved by BM25 against the query.
struct GeneratorConfig {
  std::size_t sessions = 1000;
  std::size_t intents = 24;
  std::size_t cluster_size = 3;
  std::size_t intent_words = 12;
  std::size_t cluster_words = 16;
  std::size_t background_words = 120;
  std::size_t docs_per_intent = 30;

  double mean_queries = 2.58;
  std::size_t min_queries = 2;
  std::size_t max_queries = 10;
  std::size_t candidates = 5;

  /// Probability that a session switches intent part-way through.
  double drift = 0.1;
  /// Per-token probability of a specific word at turn t: base + growth * t.
  double specificity_base = 0.1;
  double specificity_growth = 0.2;
  /// Share of cluster words among the remaining query tokens.
  double query_cluster_prob = 0.7;
  double doc_intent_prob = 0.5;
  double doc_cluster_prob = 0.3;
  std::size_t doc_min_length = 5;
  std::size_t doc_max_length = 9;
  /// Share of distractors taken from BM25 top results (rest are uniform).
  double bm25_distractor_fraction = 0.5;
  /// Probability that a turn carries no click at all.
  double no_click_prob = 0.0;
  /// Probability that the click lands on a uniformly chosen distractor
  /// instead of the document of the active intent.
  double click_noise = 0.0;

  /// Throws InputError when a field is out of range.
  void validate() const;
};

/// Latent structure shared by every split drawn from one generator seed.
struct World {
  std::vector<std::vector<std::string>> intent_vocab;
  std::vector<std::vector<std::string>> cluster_vocab;
  std::vector<std::string> background_vocab;
  std::vector<PoolDocument> docs;
  std::vector<std::size_t> doc_intent;
  std::vector<std::vector<std::size_t>> intent_docs;
  InvertedIndex index;
  /// Maps the index's dense (doc_id-sorted) position to a position in docs.
  std::vector<std::size_t> index_to_pool;
};

struct GeneratedCorpus {
  std::vector<Session> sessions;
  /// Latent intent of every turn, parallel to sessions[i].turns.
  std::vector<std::vector<std::size_t>> turn_intents;
};

World build_world(const GeneratorConfig& config, std::uint64_t seed);

/// Sessions are generated independently from per-session seeds, so the output
/// does not depend on the thread count.
GeneratedCorpus generate_split(const World& world, const GeneratorConfig& config,
                               std::uint64_t seed, std::string_view split, std::size_t count);

/// Training split of a fresh world: generate_split(build_world(c, s), c, s, "train", c.sessions).
std::vector<Session> generate_corpus(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace foreranker
