#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "foreranker/errors.hpp"
#include "foreranker/eval.hpp"
#include "foreranker/generator.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace foreranker;
using Json = nlohmann::json;

namespace {

RankedResult ranked(std::vector<int> rel) {
  RankedResult r;
  r.query_key = "q";
  for (std::size_t i = 0; i < rel.size(); ++i) {
    r.doc_ids.push_back("d" + std::to_string(i));
    r.scores.push_back(static_cast<double>(rel.size() - i));
  }
  r.relevance = std::move(rel);
  return r;
}

std::vector<int> random_relevance(Rng& rng, std::size_t n) {
  std::vector<int> rel(n);
  std::bernoulli_distribution b(0.35);
  for (auto& x : rel) x = b(rng);
  return rel;
}

QueryEvaluation fake_query(std::string key, std::size_t position, std::optional<LengthBucket> bucket,
                           double value) {
  QueryEvaluation q;
  q.key = std::move(key);
  q.position = position;
  q.bucket = bucket;
  q.ap = value;
  q.rr = value;
  q.ndcg = {value};
  return q;
}

}  // namespace

TEST_CASE("hand-computed metric values") {
  CHECK(*average_precision(ranked({1, 0, 0})) == 1.0);
  CHECK(*average_precision(ranked({1, 0, 1, 0, 0})) == (1.0 + 2.0 / 3.0) / 2.0);
  CHECK(*average_precision(ranked({1, 0, 1, 0, 0})) == doctest::Approx(0.833333).epsilon(1e-6));
  CHECK(*reciprocal_rank(ranked({1, 0})) == 1.0);
  CHECK(*reciprocal_rank(ranked({0, 0, 1, 0})) == 1.0 / 3.0);
  CHECK(*ndcg_at_k(ranked({0, 1, 0, 0, 0}), 5) == 1.0 / std::log2(3.0));
  CHECK(*ndcg_at_k(ranked({0, 1, 0, 0, 0}), 5) == doctest::Approx(0.630930).epsilon(1e-6));
  CHECK(*ndcg_at_k(ranked({0, 1, 0}), 1) == 0.0);
  for (std::size_t k : {1, 3, 5, 10}) CHECK(*ndcg_at_k(ranked({1, 1, 0, 0}), k) == 1.0);
}

TEST_CASE("queries without a relevant document have no metric") {
  auto none = ranked({0, 0, 0});
  CHECK(!average_precision(none));
  CHECK(!reciprocal_rank(none));
  CHECK(!ndcg_at_k(none, 3));
  CHECK_THROWS_AS(ndcg_at_k(ranked({1}), 0), InputError);
}

TEST_CASE("metrics match the direct definitions") {
  Rng rng(123);
  std::size_t checked = 0;
  while (checked < 1000) {
    auto rel = random_relevance(rng, 1 + rng() % 10);
    if (std::accumulate(rel.begin(), rel.end(), 0) == 0) continue;
    auto r = ranked(rel);
    CHECK(std::fabs(*average_precision(r) - oracle::average_precision(rel)) <= 1e-12);
    CHECK(std::fabs(*reciprocal_rank(r) - oracle::reciprocal_rank(rel)) <= 1e-12);
    for (std::size_t k : {1, 3, 5, 10}) CHECK(std::fabs(*ndcg_at_k(r, k) - oracle::ndcg(rel, k)) <= 1e-12);
    ++checked;
  }
}

TEST_CASE("metric invariances") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    auto rel = random_relevance(rng, 1 + rng() % 8);
    rel[rng() % rel.size()] = 1;
    auto r = ranked(rel);
    // Relabelled doc ids.
    auto relabelled = r;
    for (auto& id : relabelled.doc_ids) id = "x" + id;
    CHECK(*average_precision(relabelled) == *average_precision(r));
    CHECK(*ndcg_at_k(relabelled, 3) == *ndcg_at_k(r, 3));
    // Non-relevant documents appended below rank k do not move NDCG@k.
    for (std::size_t k : {1, 3, 5, 10}) {
      if (rel.size() < k) continue;
      auto extended = rel;
      extended.insert(extended.end(), 1 + rng() % 4, 0);
      CHECK(*ndcg_at_k(ranked(extended), k) == *ndcg_at_k(r, k));
    }
    // One relevant document: AP and RR coincide.
    if (std::accumulate(rel.begin(), rel.end(), 0) == 1) CHECK(*average_precision(r) == *reciprocal_rank(r));
  }
}

TEST_CASE("ranking sorts by score and breaks ties by doc id") {
  std::vector<Document> docs{{"b", {"x"}, false}, {"a", {"x"}, true}, {"c", {"x"}, false}};
  std::vector<double> scores{0.5, 0.5, 0.9};
  auto r = rank_candidates("k", docs, scores);
  CHECK(r.doc_ids == std::vector<std::string>{"c", "a", "b"});
  CHECK(r.relevance == std::vector<int>{0, 1, 0});
  CHECK_NOTHROW(r.validate());
  CHECK(*reciprocal_rank(r) == 0.5);

  auto bad = r;
  std::swap(bad.scores[0], bad.scores[2]);
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("session length buckets") {
  CHECK(bucket_for_length(2) == LengthBucket::kShort);
  CHECK(bucket_for_length(3) == LengthBucket::kMedium);
  CHECK(bucket_for_length(4) == LengthBucket::kMedium);
  CHECK(bucket_for_length(5) == LengthBucket::kLong);
  CHECK(bucket_for_length(7) == LengthBucket::kLong);
  CHECK(!bucket_for_length(1));
  CHECK(position_cap(LengthBucket::kShort) == 2);
  CHECK(position_cap(LengthBucket::kMedium) == 4);
  CHECK(position_cap(LengthBucket::kLong) == 7);
}

TEST_CASE("buckets partition the sessions") {
  GeneratorConfig g;
  g.sessions = 400;
  g.min_queries = 1;
  auto sessions = generate_corpus(g, 4);
  auto b = bucket_by_session_length(sessions);
  std::size_t members = 0;
  std::vector<std::size_t> all;
  for (const auto& m : b.members) {
    members += m.size();
    all.insert(all.end(), m.begin(), m.end());
  }
  CHECK(members + b.excluded_single_query == sessions.size());
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  CHECK(b.excluded_single_query > 0);
}

TEST_CASE("position cells") {
  std::vector<QueryEvaluation> first_only{fake_query("a#0", 1, LengthBucket::kShort, 1.0),
                                          fake_query("b#0", 1, LengthBucket::kShort, 0.5)};
  std::vector<std::size_t> ks{1};
  auto cells = position_breakdown(first_only, ks);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].position == 1);
  CHECK(cells[0].metrics.count == 2);
  CHECK(cells[0].metrics.map == 0.75);

  std::vector<QueryEvaluation> longer;
  for (std::size_t p = 1; p <= 9; ++p) {
    longer.push_back(fake_query("l#" + std::to_string(p), p, LengthBucket::kLong, 0.1 * p));
  }
  longer.push_back(fake_query("m#0", 2, LengthBucket::kMedium, 1.0));
  longer.push_back(fake_query("s#0", 1, std::nullopt, 1.0));  // single-query session: no cell
  auto pooled = position_breakdown(longer, ks);
  std::size_t counted = 0;
  for (const auto& c : pooled) {
    counted += c.metrics.count;
    if (c.bucket == LengthBucket::kLong) CHECK(c.position <= 7);
    if (c.bucket == LengthBucket::kLong && c.position == 7) {
      CHECK(c.metrics.count == 3);
      CHECK(c.metrics.map == doctest::Approx(0.8));
    }
  }
  CHECK(counted == 10);
  CHECK(pooled.size() == 8);  // L1..L7 and M2, nothing else
}

TEST_CASE("entropy histogram") {
  std::vector<double> ones(7, 1.0);
  auto h = entropy_histogram(ones, 10);
  CHECK(h.counts.back() == 7);
  CHECK(h.total() == 7);
  std::vector<double> spread{0.0, 0.05, 0.1, 0.55, 0.999, 1.0};
  auto s = entropy_histogram(spread, 10);
  CHECK(s.total() == spread.size());
  CHECK(s.counts[0] == 2);
  CHECK(s.counts[1] == 1);
  CHECK(s.counts[5] == 1);
  CHECK(s.counts[9] == 2);
  CHECK(s.bin_low(0) == 0.0);
  CHECK(s.bin_high(9) == 1.0);
  auto csv = entropy_histogram(spread, 20).to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
  CHECK(csv.rfind("bin_low,bin_high,count\n", 0) == 0);
  std::vector<double> bad{1.5};
  CHECK_THROWS_AS(entropy_histogram(bad, 10), InputError);
  CHECK_THROWS_AS(entropy_histogram(spread, 0), InputError);
}

TEST_CASE("paired t-test") {
  std::vector<double> a{0.3, 0.5, 0.9, 0.1};
  auto same = paired_t_test(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  CHECK(!same.degenerate);

  std::vector<double> x{1, 2, 3}, zero{0, 0, 0};
  auto r = paired_t_test(x, zero);
  CHECK(r.mean_difference == 2.0);
  CHECK(r.t == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-14));
  CHECK(r.p == doctest::Approx(0.0742).epsilon(1e-3));
  // df = 2 has the closed form p = 1 - t / sqrt(t^2 + 2).
  CHECK(std::fabs(r.p - (1.0 - r.t / std::sqrt(r.t * r.t + 2.0))) < 1e-12);
  CHECK(std::fabs(r.p - oracle::t_two_sided_p(r.t, 2.0)) < 1e-9);

  std::vector<double> shifted{1.5, 2.5, 3.5};
  std::vector<double> base{1, 2, 3};
  auto deg = paired_t_test(shifted, base);
  CHECK(deg.degenerate);
  CHECK(deg.p == 0.0);

  CHECK_THROWS_AS(paired_t_test(std::vector<double>{1}, std::vector<double>{2}), InputError);
  CHECK_THROWS_AS(paired_t_test(x, std::vector<double>{1, 2}), InputError);
}

TEST_CASE("t-test p-values agree with quadrature") {
  Rng rng(31);
  std::normal_distribution<double> gauss(0.1, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + rng() % 20;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = gauss(rng);
      b[i] = gauss(rng);
    }
    auto r = paired_t_test(a, b);
    auto o = oracle::paired_t(a, b);
    CHECK(r.t == doctest::Approx(o.t).epsilon(1e-12));
    CHECK(std::fabs(r.p - o.p) < 1e-8);
  }
}

TEST_CASE("bonferroni") {
  CHECK(bonferroni(0.01, 3) == doctest::Approx(0.03));
  CHECK(bonferroni(0.4, 3) == 1.0);
  CHECK(bonferroni(0.2, 1) == 0.2);
}

TEST_CASE("summaries skip queries without a relevant document") {
  std::vector<std::size_t> ks{1};
  std::vector<QueryEvaluation> qs{fake_query("a#0", 1, LengthBucket::kShort, 1.0),
                                  fake_query("a#1", 2, LengthBucket::kShort, 0.0)};
  QueryEvaluation empty;
  empty.key = "b#0";
  empty.ndcg = {std::nullopt};
  qs.push_back(empty);
  auto s = summarize(qs, ks);
  REQUIRE(s);
  CHECK(s->count == 2);
  CHECK(s->map == 0.5);
  CHECK(!summarize(std::span<const QueryEvaluation>(&qs[2], 1), ks));
  CHECK(metric_names(ks) == std::vector<std::string>{"map", "mrr", "ndcg@1"});
}

TEST_CASE("a zero-head model has uniform predictions") {
  GeneratorConfig g;
  g.sessions = 30;
  auto sessions = generate_corpus(g, 2);
  auto vocab = Vocabulary::from_sessions(sessions);
  auto arch = testing_support::tiny_arch(vocab.size());
  arch.max_length = 64;
  auto params = init_params<double>(arch, 1);
  params.zero_head_output();
  EvalOptions opts;
  auto evals = evaluate_model(params, sessions, vocab, opts);
  std::size_t turns = 0;
  for (const auto& s : sessions) turns += s.turns.size();
  REQUIRE(evals.size() == turns);
  std::vector<double> ent;
  for (const auto& q : evals) {
    REQUIRE(q.normalized_entropy);
    CHECK(*q.normalized_entropy == doctest::Approx(1.0).epsilon(1e-12));
    ent.push_back(std::min(1.0, *q.normalized_entropy));
  }
  auto h = entropy_histogram(ent, 10);
  CHECK(h.counts.back() == ent.size());
}

TEST_CASE("model evaluation is independent of the thread count and the report is consistent") {
  GeneratorConfig g;
  g.sessions = 80;
  auto sessions = generate_corpus(g, 6);
  auto vocab = Vocabulary::from_sessions(sessions);
  auto arch = testing_support::tiny_arch(vocab.size());
  arch.max_length = 64;
  auto params = init_params<float>(arch, 3);
  EvalOptions opts;
  auto a = evaluate_model(params, sessions, vocab, opts);
  auto b = evaluate_model(params, sessions, vocab, opts);
  CHECK(samples_csv(a, opts.ndcg_ks) == samples_csv(b, opts.ndcg_ks));

  auto random = evaluate_random(sessions, 9, opts.ndcg_ks);
  auto bm25 = evaluate_bm25(sessions, opts.ndcg_ks);
  auto report = build_report(sessions, a, {{"random", random}, {"bm25", bm25}}, opts);
  CHECK(report.queries == a.size());
  REQUIRE(report.overall);
  for (double v : report.overall->values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::size_t bucketed = 0;
  for (const auto& bk : report.buckets) bucketed += bk ? bk->count : 0;
  std::size_t celled = 0;
  for (const auto& c : report.positions) celled += c.metrics.count;
  CHECK(bucketed == celled);
  CHECK(report.entropy.total() == a.size());
  // Two baselines, five metrics each.
  CHECK(report.significance.size() == 2 * metric_names(opts.ndcg_ks).size());
  for (const auto& s : report.significance) {
    CHECK(s.p_corrected == doctest::Approx(std::min(1.0, s.test.p * report.significance.size())));
  }

  auto csv = report.to_csv();
  CHECK(csv.rfind("metric,overall,short,medium,long\n", 0) == 0);
  for (const char* m : {"map,", "mrr,", "ndcg@1,", "ndcg@3,", "ndcg@5,", "ndcg@10,"}) {
    CHECK(csv.find(std::string("\n") + m) != std::string::npos);
  }
  auto json = Json::parse(report.to_json());
  CHECK(json.contains("overall"));
  CHECK(json.contains("buckets"));
  CHECK(json.contains("positions"));
  CHECK(json.contains("entropy"));
  CHECK(json.contains("significance"));
}

TEST_CASE("samples files round trip and compare") {
  std::vector<std::size_t> ks{1, 3};
  std::vector<QueryEvaluation> qs;
  for (int i = 0; i < 6; ++i) {
    QueryEvaluation q;
    q.key = "s" + std::to_string(i) + "#0";
    q.ap = 0.1 * i;
    q.rr = 0.2 + 0.1 * i;
    q.ndcg = {0.05 * i, 1.0 / (i + 1)};
    qs.push_back(q);
  }
  auto text = samples_csv(qs, ks);
  auto parsed = parse_samples_csv(text);
  CHECK(parsed.metrics == std::vector<std::string>{"map", "mrr", "ndcg@1", "ndcg@3"});
  REQUIRE(parsed.rows.size() == 6);
  CHECK(parsed.rows[3][0] == 0.1 * 3);
  CHECK(parsed.rows[5][3] == 1.0 / 6);

  auto self = compare_samples(parsed, parsed, "self");
  CHECK(self.size() == 4);
  for (const auto& r : self) {
    CHECK(r.test.p == 1.0);
    CHECK(r.p_corrected == 1.0);
  }
  auto json = Json::parse(significance_json(self));
  CHECK(json.dump().find("p_bonferroni") != std::string::npos);

  auto other = parsed;
  other.keys[2] = "zzz#0";
  CHECK_THROWS_WITH_AS(compare_samples(parsed, other, "x"), doctest::Contains("zzz#0"), InputError);

  CHECK_THROWS_AS(parse_samples_csv("query_key,map\na,0.5\na,0.2\n"), ParseError);
  try {
    parse_samples_csv("query_key,map\na,0.5\nb,oops\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}
