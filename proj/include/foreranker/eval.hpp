#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foreranker/corpus.hpp"
#include "foreranker/encoder.hpp"
#include "foreranker/vocab.hpp"

namespace foreranker {

/// One query's candidates in ranked order.
struct RankedResult {
  std::string query_key;
  std::vector<std::string> doc_ids;
  std::vector<double> scores;  // non-increasing
  std::vector<int> relevance;  // 0 or 1 per ranked document

  /// Throws InputError on an empty list, ragged fields, non-binary labels or
  /// increasing scores.
  void validate() const;
  std::size_t num_relevant() const;
};

/// Sorts by descending score; equal scores fall back to ascending doc_id.
RankedResult rank_candidates(std::string query_key, std::span<const Document> candidates,
                             std::span<const double> scores);

// Metrics over binary relevance. Queries without a relevant document have no
// value and are left out of the means.
std::optional<double> average_precision(const RankedResult& r);
std::optional<double> reciprocal_rank(const RankedResult& r);
/// Throws InputError for k = 0.
std::optional<double> ndcg_at_k(const RankedResult& r, std::size_t k);

enum class LengthBucket : int { kShort = 0, kMedium = 1, kLong = 2 };
inline constexpr std::array<LengthBucket, 3> kBuckets = {LengthBucket::kShort, LengthBucket::kMedium,
                                                         LengthBucket::kLong};
std::string to_string(LengthBucket b);

/// 2 queries: short; 3-4: medium; 5 or more: long; a single query: none.
std::optional<LengthBucket> bucket_for_length(std::size_t num_queries);

struct SessionBuckets {
  std::array<std::vector<std::size_t>, 3> members;  // session indices per bucket
  std::size_t excluded_single_query = 0;
};
SessionBuckets bucket_by_session_length(std::span<const Session> sessions);

/// Position columns per bucket: S1-S2, M1-M4, L1-L7 (L7 pools the overflow).
std::size_t position_cap(LengthBucket b);

inline const std::vector<std::size_t> kDefaultNdcgKs = {1, 3, 5, 10};

/// Per-query outcome, the unit for means, cells and significance tests.
struct QueryEvaluation {
  std::string key;  // "<session_id>#<turn>"
  std::size_t position = 1;  // 1-based within the session
  std::optional<LengthBucket> bucket;
  std::optional<double> ap, rr;
  std::vector<std::optional<double>> ndcg;  // aligned with the report's k list
  std::optional<double> normalized_entropy;  // absent below two candidates

  bool evaluated() const { return ap.has_value(); }
};

QueryEvaluation evaluate_result(const RankedResult& r, std::span<const std::size_t> ks);

struct MetricSummary {
  std::size_t count = 0;  // queries with a relevant document
  double map = 0.0, mrr = 0.0;
  std::vector<double> ndcg;

  /// {"map", "mrr", "ndcg@k"...} values in metric_names order.
  std::vector<double> values() const;
};

std::vector<std::string> metric_names(std::span<const std::size_t> ks);

/// Means over evaluated queries; absent when there is none.
std::optional<MetricSummary> summarize(std::span<const QueryEvaluation> queries,
                                       std::span<const std::size_t> ks);

struct PositionCell {
  LengthBucket bucket;
  std::size_t position;  // 1-based, capped by position_cap
  MetricSummary metrics;
};

/// Only populated cells are returned, ordered by bucket then position.
std::vector<PositionCell> position_breakdown(std::span<const QueryEvaluation> queries,
                                             std::span<const std::size_t> ks);

/// Shortest text that reads back to the same double.
std::string format_number(double v);

struct Histogram {
  std::vector<std::size_t> counts;
  double low = 0.0, high = 1.0;

  double bin_low(std::size_t i) const;
  double bin_high(std::size_t i) const;
  std::size_t total() const;
  /// `bin_low,bin_high,count`
  std::string to_csv() const;
};

/// Equal-width bins over [0,1]; 1.0 falls into the last bin. Values outside
/// [0,1] raise InputError.
Histogram entropy_histogram(std::span<const double> values, std::size_t bins);

struct TTestResult {
  std::size_t n = 0;
  double mean_difference = 0.0;
  double t = 0.0;
  double p = 1.0;
  /// Zero variance with a nonzero mean difference: p is reported as 0.
  bool degenerate = false;
};

/// Two-sided paired t-test on a - b. Throws InputError for unequal lengths
/// or fewer than two pairs.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

double bonferroni(double p, std::size_t comparisons);

struct SignificanceResult {
  std::string comparison;
  std::string metric;
  TTestResult test;
  double p_corrected = 1.0;
};

struct BaselineSummary {
  std::string name;
  std::optional<MetricSummary> overall;
};

struct MetricsReport {
  std::vector<std::size_t> ndcg_ks;
  std::size_t queries = 0;
  std::size_t queries_without_relevant = 0;
  std::size_t excluded_single_query_sessions = 0;
  std::optional<MetricSummary> overall;
  std::array<std::optional<MetricSummary>, 3> buckets;
  std::vector<PositionCell> positions;
  Histogram entropy;
  std::optional<double> mean_entropy;
  std::vector<BaselineSummary> baselines;
  std::vector<SignificanceResult> significance;

  /// `metric,overall,short,medium,long`; empty fields for empty buckets.
  std::string to_csv() const;
  std::string to_json() const;
};

struct EvalOptions {
  std::vector<std::size_t> ndcg_ks = kDefaultNdcgKs;
  std::size_t entropy_bins = 10;
  bool with_future = false;
  std::size_t future_k = kDefaultFutureTurns;
};

/// Scores every turn of every session with the given twin and evaluates it.
/// Results are in session/turn order whatever the thread count.
template <typename T>
std::vector<QueryEvaluation> evaluate_model(const ModelParams<T>& params, std::span<const Session> sessions,
                                            const Vocabulary& vocab, const EvalOptions& options);

/// Uniform random scores drawn from the seed, one stream per query.
std::vector<QueryEvaluation> evaluate_random(std::span<const Session> sessions, std::uint64_t seed,
                                             std::span<const std::size_t> ks);

/// BM25 over the pool of documents appearing in the sessions.
std::vector<QueryEvaluation> evaluate_bm25(std::span<const Session> sessions,
                                           std::span<const std::size_t> ks);

/// Assembles overall, bucket, position and entropy sections. Significance
/// against each baseline is tested per metric on the shared evaluated
/// queries, with Bonferroni over all tests in the report.
MetricsReport build_report(std::span<const Session> sessions, std::span<const QueryEvaluation> model,
                           const std::vector<std::pair<std::string, std::vector<QueryEvaluation>>>& baselines,
                           const EvalOptions& options);

/// Per-query samples: `query_key,<metric>...` for evaluated queries only.
std::string samples_csv(std::span<const QueryEvaluation> queries, std::span<const std::size_t> ks);

struct MetricSamples {
  std::vector<std::string> metrics;
  std::vector<std::string> keys;
  std::vector<std::vector<double>> rows;  // rows[i][m]
};

/// Throws ParseError with the line number on malformed input.
MetricSamples parse_samples_csv(const std::string& text);

/// Paired tests per shared metric, Bonferroni over the metric count. Throws
/// InputError listing keys that appear in only one file.
std::vector<SignificanceResult> compare_samples(const MetricSamples& a, const MetricSamples& b,
                                                const std::string& comparison);
std::string significance_json(const std::vector<SignificanceResult>& results);

}  // namespace foreranker
