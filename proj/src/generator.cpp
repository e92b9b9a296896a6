#include "foreranker/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "foreranker/errors.hpp"
#include "foreranker/rng.hpp"

namespace foreranker {

namespace {

bool is_prob(double p) { return p >= 0.0 && p <= 1.0; }

std::string numbered(const char* prefix, std::size_t a, std::size_t b) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%zu_%zu", prefix, a, b);
  return buf;
}

std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double unit(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::size_t cluster_of(const GeneratorConfig& config, std::size_t intent) {
  return intent / config.cluster_size;
}

// Query lengths 1..5 with mean 2.85.
constexpr double kQueryLengthWeights[] = {0.10, 0.30, 0.35, 0.15, 0.10};

}  // namespace

void GeneratorConfig::validate() const {
  if (sessions == 0) throw InputError("generator: session count must be positive");
  if (intents < 2) throw InputError("generator: need at least 2 intents");
  if (cluster_size == 0) throw InputError("generator: cluster_size must be positive");
  if (intent_words == 0 || cluster_words == 0 || background_words == 0) {
    throw InputError("generator: word pools must be non-empty");
  }
  if (docs_per_intent == 0) throw InputError("generator: docs_per_intent must be positive");
  if (min_queries == 0 || max_queries < min_queries) {
    throw InputError("generator: need 1 <= min_queries <= max_queries");
  }
  if (!(mean_queries >= static_cast<double>(min_queries)) ||
      mean_queries > static_cast<double>(max_queries)) {
    throw InputError("generator: mean_queries must lie in [min_queries, max_queries]");
  }
  if (candidates == 0) throw InputError("generator: candidates must be positive");
  if (candidates - 1 > (intents - 1) * docs_per_intent) {
    throw InputError("generator: not enough documents of other intents for the distractors");
  }
  if (!is_prob(drift)) throw InputError("generator: drift probability must lie in [0,1]");
  if (!is_prob(specificity_base) || !(specificity_growth >= 0.0)) {
    throw InputError("generator: specificity must be a probability with non-negative growth");
  }
  if (!is_prob(query_cluster_prob) || !is_prob(doc_intent_prob) || !is_prob(doc_cluster_prob) ||
      doc_intent_prob + doc_cluster_prob > 1.0) {
    throw InputError("generator: word-mixture probabilities out of range");
  }
  if (doc_min_length == 0 || doc_max_length < doc_min_length) {
    throw InputError("generator: need 1 <= doc_min_length <= doc_max_length");
  }
  if (!is_prob(bm25_distractor_fraction) || !is_prob(no_click_prob) || !is_prob(click_noise)) {
    throw InputError("generator: fractions must lie in [0,1]");
  }
}

World build_world(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, "world");

  const std::size_t clusters = (config.intents + config.cluster_size - 1) / config.cluster_size;
  std::vector<std::vector<std::string>> intent_vocab(config.intents);
  for (std::size_t i = 0; i < config.intents; ++i) {
    for (std::size_t w = 0; w < config.intent_words; ++w) intent_vocab[i].push_back(numbered("i", i, w));
  }
  std::vector<std::vector<std::string>> cluster_vocab(clusters);
  for (std::size_t c = 0; c < clusters; ++c) {
    for (std::size_t w = 0; w < config.cluster_words; ++w) cluster_vocab[c].push_back(numbered("c", c, w));
  }
  std::vector<std::string> background;
  for (std::size_t w = 0; w < config.background_words; ++w) background.push_back(numbered("b", 0, w));

  const std::size_t total_docs = config.intents * config.docs_per_intent;
  // Opaque ids: a random permutation so ids carry no intent information.
  std::vector<std::size_t> labels(total_docs);
  std::iota(labels.begin(), labels.end(), 0);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<PoolDocument> docs;
  std::vector<std::size_t> doc_intent;
  std::vector<std::vector<std::size_t>> intent_docs(config.intents);
  docs.reserve(total_docs);
  std::uniform_int_distribution<std::size_t> length(config.doc_min_length, config.doc_max_length);
  for (std::size_t i = 0; i < config.intents; ++i) {
    const auto& cluster = cluster_vocab[cluster_of(config, i)];
    for (std::size_t k = 0; k < config.docs_per_intent; ++k) {
      PoolDocument doc;
      char id[32];
      std::snprintf(id, sizeof(id), "D%06zu", labels[docs.size()]);
      doc.doc_id = id;
      const std::size_t len = length(rng);
      for (std::size_t t = 0; t < len; ++t) {
        const double u = unit(rng);
        if (u < config.doc_intent_prob) {
          doc.tokens.push_back(intent_vocab[i][pick(rng, intent_vocab[i].size())]);
        } else if (u < config.doc_intent_prob + config.doc_cluster_prob) {
          doc.tokens.push_back(cluster[pick(rng, cluster.size())]);
        } else {
          doc.tokens.push_back(background[pick(rng, background.size())]);
        }
      }
      intent_docs[i].push_back(docs.size());
      doc_intent.push_back(i);
      docs.push_back(std::move(doc));
    }
  }
  InvertedIndex index(docs);
  std::vector<std::size_t> index_to_pool(docs.size());
  for (std::size_t p = 0; p < docs.size(); ++p) {
    // Ids are "D" + label, zero padded, so ascending id order is label order.
    index_to_pool[labels[p]] = p;
  }
  return World{std::move(intent_vocab), std::move(cluster_vocab), std::move(background),
               std::move(docs),         std::move(doc_intent),    std::move(intent_docs),
               std::move(index),        std::move(index_to_pool)};
}

namespace {

struct SessionDraw {
  Session session;
  std::vector<std::size_t> intents;
};

SessionDraw draw_session(const World& world, const GeneratorConfig& config, Rng& rng,
                         std::string session_id) {
  SessionDraw out;
  out.session.session_id = std::move(session_id);

  // min + Geometric(p) has mean min + (1-p)/p.
  const double extra_mean = config.mean_queries - static_cast<double>(config.min_queries);
  std::size_t turns = config.min_queries;
  if (extra_mean > 0.0) {
    std::geometric_distribution<std::size_t> extra(1.0 / (1.0 + extra_mean));
    turns = std::min(config.max_queries, config.min_queries + extra(rng));
  }

  const std::size_t first_intent = pick(rng, config.intents);
  std::size_t switch_turn = turns;
  std::size_t second_intent = first_intent;
  if (turns >= 2 && unit(rng) < config.drift) {
    switch_turn = 1 + pick(rng, turns - 1);
    second_intent = (first_intent + 1 + pick(rng, config.intents - 1)) % config.intents;
  }

  std::discrete_distribution<std::size_t> query_length(std::begin(kQueryLengthWeights),
                                                       std::end(kQueryLengthWeights));
  const std::size_t n_distractors = config.candidates - 1;
  const auto n_bm25 = static_cast<std::size_t>(
      std::lround(config.bm25_distractor_fraction * static_cast<double>(n_distractors)));

  for (std::size_t t = 0; t < turns; ++t) {
    const std::size_t intent = t < switch_turn ? first_intent : second_intent;
    out.intents.push_back(intent);
    const auto& specific = world.intent_vocab[intent];
    const auto& cluster = world.cluster_vocab[cluster_of(config, intent)];
    const double p_specific =
        std::min(1.0, config.specificity_base + config.specificity_growth * static_cast<double>(t));

    QueryTurn turn;
    const std::size_t qlen = 1 + query_length(rng);
    for (std::size_t k = 0; k < qlen; ++k) {
      const double u = unit(rng);
      if (u < p_specific) {
        turn.query.push_back(specific[pick(rng, specific.size())]);
      } else if (u < p_specific + (1.0 - p_specific) * config.query_cluster_prob) {
        turn.query.push_back(cluster[pick(rng, cluster.size())]);
      } else {
        turn.query.push_back(world.background_vocab[pick(rng, world.background_vocab.size())]);
      }
    }

    const auto& own = world.intent_docs[intent];
    const std::size_t positive = own[pick(rng, own.size())];
    std::vector<std::size_t> chosen{positive};
    auto taken = [&](std::size_t d) {
      return world.doc_intent[d] == intent || std::find(chosen.begin(), chosen.end(), d) != chosen.end();
    };

    if (n_bm25 > 0) {
      const auto scores = world.index.score_all(turn.query);
      std::vector<std::size_t> order(scores.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      std::size_t added = 0;
      for (std::size_t dense : order) {
        if (added == n_bm25) break;
        const std::size_t pool_pos = world.index_to_pool[dense];
        if (taken(pool_pos)) continue;
        chosen.push_back(pool_pos);
        ++added;
      }
    }
    while (chosen.size() < config.candidates) {
      const std::size_t d = pick(rng, world.docs.size());
      if (!taken(d)) chosen.push_back(d);
    }
    // Draws happen only for nonzero knobs so that enabling one knob leaves
    // the rest of the stream of a zero-knob corpus untouched.
    std::size_t click_target = positive;
    if (config.click_noise > 0.0 && chosen.size() > 1 && unit(rng) < config.click_noise) {
      click_target = chosen[1 + pick(rng, chosen.size() - 1)];
    }
    std::shuffle(chosen.begin(), chosen.end(), rng);

    const bool clicked = !(config.no_click_prob > 0.0 && unit(rng) < config.no_click_prob);
    for (std::size_t j = 0; j < chosen.size(); ++j) {
      const auto& src = world.docs[chosen[j]];
      const bool is_positive = chosen[j] == click_target;
      turn.candidates.push_back({src.doc_id, src.tokens, clicked && is_positive});
      if (clicked && is_positive) turn.positive_index = j;
    }
    out.session.turns.push_back(std::move(turn));
  }
  return out;
}

}  // namespace

GeneratedCorpus generate_split(const World& world, const GeneratorConfig& config,
                               std::uint64_t seed, std::string_view split, std::size_t count) {
  config.validate();
  GeneratedCorpus out;
  out.sessions.resize(count);
  out.turn_intents.resize(count);
  const std::string label = "sessions/" + std::string(split) + "/";

#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, label + std::to_string(i));
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%06zu", std::string(split).c_str(), i);
    auto draw = draw_session(world, config, rng, id);
    out.sessions[i] = std::move(draw.session);
    out.turn_intents[i] = std::move(draw.intents);
  }
  return out;
}

std::vector<Session> generate_corpus(const GeneratorConfig& config, std::uint64_t seed) {
  const World world = build_world(config, seed);
  return generate_split(world, config, seed, "train", config.sessions).sessions;
}

}  // namespace foreranker
