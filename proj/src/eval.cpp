#include "foreranker/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "foreranker/errors.hpp"
#include "foreranker/objectives.hpp"
#include "foreranker/retrieval.hpp"
#include "foreranker/rng.hpp"

namespace foreranker {

using Json = nlohmann::ordered_json;

void RankedResult::validate() const {
  if (doc_ids.empty()) throw InputError("ranked result " + query_key + " has no candidates");
  if (scores.size() != doc_ids.size() || relevance.size() != doc_ids.size()) {
    throw InputError("ranked result " + query_key + " has ragged fields");
  }
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i] != 0 && relevance[i] != 1) throw InputError("relevance must be 0 or 1");
    if (i > 0 && scores[i] > scores[i - 1]) {
      throw InputError("ranked result " + query_key + " has increasing scores");
    }
  }
}

std::size_t RankedResult::num_relevant() const {
  return static_cast<std::size_t>(std::count(relevance.begin(), relevance.end(), 1));
}

RankedResult rank_candidates(std::string query_key, std::span<const Document> candidates,
                             std::span<const double> scores) {
  if (candidates.empty()) throw InputError("cannot rank an empty candidate list");
  if (candidates.size() != scores.size()) throw InputError("one score per candidate required");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a].doc_id < candidates[b].doc_id;
  });
  RankedResult r;
  r.query_key = std::move(query_key);
  for (std::size_t i : order) {
    r.doc_ids.push_back(candidates[i].doc_id);
    r.scores.push_back(scores[i]);
    r.relevance.push_back(candidates[i].clicked ? 1 : 0);
  }
  return r;
}

std::optional<double> average_precision(const RankedResult& r) {
  const std::size_t total = r.num_relevant();
  if (total == 0) return std::nullopt;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < r.relevance.size(); ++i) {
    if (r.relevance[i] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total);
}

std::optional<double> reciprocal_rank(const RankedResult& r) {
  for (std::size_t i = 0; i < r.relevance.size(); ++i) {
    if (r.relevance[i] == 1) return 1.0 / static_cast<double>(i + 1);
  }
  return std::nullopt;
}

std::optional<double> ndcg_at_k(const RankedResult& r, std::size_t k) {
  if (k == 0) throw InputError("NDCG cutoff must be at least 1");
  const std::size_t total = r.num_relevant();
  if (total == 0) return std::nullopt;
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, r.relevance.size()); ++i) {
    if (r.relevance[i] == 1) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, total); ++i) ideal += 1.0 / std::log2(static_cast<double>(i + 2));
  return dcg / ideal;
}

std::string to_string(LengthBucket b) {
  switch (b) {
    case LengthBucket::kShort: return "short";
    case LengthBucket::kMedium: return "medium";
    case LengthBucket::kLong: return "long";
  }
  return "unknown";
}

std::optional<LengthBucket> bucket_for_length(std::size_t n) {
  if (n < 2) return std::nullopt;
  if (n == 2) return LengthBucket::kShort;
  if (n <= 4) return LengthBucket::kMedium;
  return LengthBucket::kLong;
}

SessionBuckets bucket_by_session_length(std::span<const Session> sessions) {
  SessionBuckets out;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (auto b = bucket_for_length(sessions[i].turns.size())) {
      out.members[static_cast<int>(*b)].push_back(i);
    } else {
      ++out.excluded_single_query;
    }
  }
  return out;
}

std::size_t position_cap(LengthBucket b) {
  switch (b) {
    case LengthBucket::kShort: return 2;
    case LengthBucket::kMedium: return 4;
    case LengthBucket::kLong: return 7;
  }
  return 0;
}

QueryEvaluation evaluate_result(const RankedResult& r, std::span<const std::size_t> ks) {
  QueryEvaluation q;
  q.key = r.query_key;
  q.ap = average_precision(r);
  q.rr = reciprocal_rank(r);
  for (std::size_t k : ks) q.ndcg.push_back(ndcg_at_k(r, k));
  return q;
}

std::vector<double> MetricSummary::values() const {
  std::vector<double> v = {map, mrr};
  v.insert(v.end(), ndcg.begin(), ndcg.end());
  return v;
}

std::vector<std::string> metric_names(std::span<const std::size_t> ks) {
  std::vector<std::string> names = {"map", "mrr"};
  for (std::size_t k : ks) names.push_back("ndcg@" + std::to_string(k));
  return names;
}

std::string format_number(double v) { return Json(v).dump(); }

namespace {

std::vector<double> sample_values(const QueryEvaluation& q) {
  std::vector<double> v = {*q.ap, *q.rr};
  for (const auto& n : q.ndcg) v.push_back(*n);
  return v;
}

template <typename Pred>
std::optional<MetricSummary> summarize_if(std::span<const QueryEvaluation> queries,
                                          std::span<const std::size_t> ks, Pred pred) {
  MetricSummary s;
  s.ndcg.assign(ks.size(), 0.0);
  for (const auto& q : queries) {
    if (!q.evaluated() || !pred(q)) continue;
    if (q.ndcg.size() != ks.size()) throw InputError("query evaluation has the wrong NDCG count");
    ++s.count;
    s.map += *q.ap;
    s.mrr += *q.rr;
    for (std::size_t i = 0; i < ks.size(); ++i) s.ndcg[i] += *q.ndcg[i];
  }
  if (s.count == 0) return std::nullopt;
  const double n = static_cast<double>(s.count);
  s.map /= n;
  s.mrr /= n;
  for (auto& v : s.ndcg) v /= n;
  return s;
}

Json summary_json(const std::optional<MetricSummary>& s, std::span<const std::size_t> ks) {
  if (!s) return nullptr;
  Json j;
  j["count"] = s->count;
  const auto names = metric_names(ks);
  const auto values = s->values();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = values[i];
  return j;
}

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json significance_entry(const SignificanceResult& r) {
  Json j;
  j["comparison"] = r.comparison;
  j["metric"] = r.metric;
  j["n"] = r.test.n;
  j["mean_difference"] = r.test.mean_difference;
  j["t"] = finite_or_null(r.test.t);
  j["p"] = r.test.p;
  j["p_bonferroni"] = r.p_corrected;
  j["degenerate"] = r.test.degenerate;
  return j;
}

std::string position_label(LengthBucket b, std::size_t pos) {
  static constexpr char kPrefix[] = {'S', 'M', 'L'};
  return kPrefix[static_cast<int>(b)] + std::to_string(pos);
}

// Runs body(i) for i in [0, n) across threads and rethrows the first error.
template <typename Body>
void parallel_for(std::size_t n, Body body) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(foreranker_eval_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

struct TurnRef {
  std::size_t session;
  std::size_t turn;
};

std::vector<TurnRef> all_turns(std::span<const Session> sessions) {
  std::vector<TurnRef> refs;
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    for (std::size_t t = 0; t < sessions[s].turns.size(); ++t) refs.push_back({s, t});
  }
  return refs;
}

std::string query_key(const Session& s, std::size_t turn) { return s.session_id + "#" + std::to_string(turn); }

QueryEvaluation evaluate_scores(const Session& session, std::size_t turn, std::span<const double> scores,
                                std::span<const std::size_t> ks, bool with_entropy) {
  const auto& candidates = session.turns[turn].candidates;
  auto q = evaluate_result(rank_candidates(query_key(session, turn), candidates, scores), ks);
  q.position = turn + 1;
  q.bucket = bucket_for_length(session.turns.size());
  if (with_entropy && scores.size() >= 2) q.normalized_entropy = entropy(softmax_scores(scores), true);
  return q;
}

}  // namespace

std::optional<MetricSummary> summarize(std::span<const QueryEvaluation> queries,
                                       std::span<const std::size_t> ks) {
  return summarize_if(queries, ks, [](const QueryEvaluation&) { return true; });
}

std::vector<PositionCell> position_breakdown(std::span<const QueryEvaluation> queries,
                                             std::span<const std::size_t> ks) {
  std::vector<PositionCell> cells;
  for (LengthBucket b : kBuckets) {
    const std::size_t cap = position_cap(b);
    for (std::size_t pos = 1; pos <= cap; ++pos) {
      auto s = summarize_if(queries, ks, [&](const QueryEvaluation& q) {
        return q.bucket == b && std::min(q.position, cap) == pos;
      });
      if (s) cells.push_back({b, pos, std::move(*s)});
    }
  }
  return cells;
}

double Histogram::bin_low(std::size_t i) const {
  return low + (high - low) * static_cast<double>(i) / static_cast<double>(counts.size());
}

double Histogram::bin_high(std::size_t i) const { return bin_low(i + 1); }

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::string Histogram::to_csv() const {
  std::string out = "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out += format_number(bin_low(i)) + "," + format_number(bin_high(i)) + "," + std::to_string(counts[i]) + "\n";
  }
  return out;
}

Histogram entropy_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw InputError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("normalized entropy outside [0,1]");
    const auto idx = static_cast<std::size_t>(v * static_cast<double>(bins));
    ++h.counts[std::min(idx, bins - 1)];
  }
  return h;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("paired t-test needs samples of equal length");
  if (a.size() < 2) throw InputError("paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];

  TTestResult r;
  r.n = n;
  const bool constant = std::all_of(d.begin(), d.end(), [&](double x) { return x == d[0]; });
  if (constant) {
    // Summing identical values can leave a rounding residue in the variance,
    // so constant differences are detected directly.
    r.mean_difference = d[0];
    if (d[0] == 0.0) return r;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), d[0]);
    r.p = 0.0;
    r.degenerate = true;
    return r;
  }
  const double nn = static_cast<double>(n);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / nn;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (nn - 1.0));
  r.mean_difference = mean;
  r.t = mean / (sd / std::sqrt(nn));
  boost::math::students_t dist(nn - 1.0);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
  return r;
}

double bonferroni(double p, std::size_t comparisons) {
  return std::min(1.0, p * static_cast<double>(std::max<std::size_t>(comparisons, 1)));
}

std::string MetricsReport::to_csv() const {
  std::string out = "metric,overall,short,medium,long\n";
  const auto names = metric_names(ndcg_ks);
  auto cell = [](const std::optional<MetricSummary>& s, std::size_t i) {
    return s ? format_number(s->values()[i]) : std::string();
  };
  for (std::size_t i = 0; i < names.size(); ++i) {
    out += names[i] + "," + cell(overall, i);
    for (const auto& b : buckets) out += "," + cell(b, i);
    out += "\n";
  }
  out += "count," + (overall ? std::to_string(overall->count) : std::string("0"));
  for (const auto& b : buckets) out += "," + (b ? std::to_string(b->count) : std::string("0"));
  out += "\n";
  return out;
}

std::string MetricsReport::to_json() const {
  Json j;
  j["ndcg_ks"] = ndcg_ks;
  j["queries"] = queries;
  j["queries_without_relevant"] = queries_without_relevant;
  j["excluded_single_query_sessions"] = excluded_single_query_sessions;
  j["overall"] = summary_json(overall, ndcg_ks);
  Json b = Json::object();
  for (LengthBucket lb : kBuckets) b[to_string(lb)] = summary_json(buckets[static_cast<int>(lb)], ndcg_ks);
  j["buckets"] = b;
  Json cells = Json::array();
  for (const auto& c : positions) {
    Json e;
    e["bucket"] = to_string(c.bucket);
    e["position"] = c.position;
    e["label"] = position_label(c.bucket, c.position);
    e["metrics"] = summary_json(c.metrics, ndcg_ks);
    cells.push_back(e);
  }
  j["positions"] = cells;
  Json ent;
  ent["mean"] = mean_entropy ? Json(*mean_entropy) : Json(nullptr);
  ent["count"] = entropy.total();
  Json bins = Json::array();
  for (std::size_t i = 0; i < entropy.counts.size(); ++i) {
    bins.push_back({{"bin_low", entropy.bin_low(i)}, {"bin_high", entropy.bin_high(i)}, {"count", entropy.counts[i]}});
  }
  ent["histogram"] = bins;
  j["entropy"] = ent;
  Json base = Json::object();
  for (const auto& s : baselines) base[s.name] = summary_json(s.overall, ndcg_ks);
  j["baselines"] = base;
  Json sig = Json::array();
  for (const auto& s : significance) sig.push_back(significance_entry(s));
  j["significance"] = sig;
  return j.dump(2) + "\n";
}

template <typename T>
std::vector<QueryEvaluation> evaluate_model(const ModelParams<T>& params, std::span<const Session> sessions,
                                            const Vocabulary& vocab, const EvalOptions& options) {
  const auto refs = all_turns(sessions);
  std::vector<QueryEvaluation> out(refs.size());
  parallel_for(refs.size(), [&](std::size_t i) {
    const auto& session = sessions[refs[i].session];
    const std::size_t turn = refs[i].turn;
    const auto history = build_history(session, turn);
    std::optional<BehaviorWindow> future;
    if (options.with_future) future = build_future(session, turn, options.future_k);
    RankingContext ctx{&history, session.turns[turn].query, future ? &*future : nullptr};
    const auto scores = score_candidates(params, ctx, session.turns[turn].candidates, vocab);
    out[i] = evaluate_scores(session, turn, scores, options.ndcg_ks, true);
  });
  return out;
}

std::vector<QueryEvaluation> evaluate_random(std::span<const Session> sessions, std::uint64_t seed,
                                             std::span<const std::size_t> ks) {
  std::vector<QueryEvaluation> out;
  for (const auto& ref : all_turns(sessions)) {
    const auto& session = sessions[ref.session];
    Rng rng = make_rng(seed, "eval/random/" + query_key(session, ref.turn));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> scores(session.turns[ref.turn].candidates.size());
    for (auto& s : scores) s = u(rng);
    out.push_back(evaluate_scores(session, ref.turn, scores, ks, false));
  }
  return out;
}

std::vector<QueryEvaluation> evaluate_bm25(std::span<const Session> sessions, std::span<const std::size_t> ks) {
  const auto pool = document_pool(sessions);
  const InvertedIndex index(pool);
  std::vector<QueryEvaluation> out;
  for (const auto& ref : all_turns(sessions)) {
    const auto& session = sessions[ref.session];
    const auto& turn = session.turns[ref.turn];
    std::vector<double> scores;
    for (const auto& c : turn.candidates) scores.push_back(index.score(turn.query, c.doc_id));
    out.push_back(evaluate_scores(session, ref.turn, scores, ks, false));
  }
  return out;
}

MetricsReport build_report(std::span<const Session> sessions, std::span<const QueryEvaluation> model,
                           const std::vector<std::pair<std::string, std::vector<QueryEvaluation>>>& baselines,
                           const EvalOptions& options) {
  const auto& ks = options.ndcg_ks;
  MetricsReport r;
  r.ndcg_ks = ks;
  r.queries = model.size();
  r.queries_without_relevant =
      static_cast<std::size_t>(std::count_if(model.begin(), model.end(), [](const auto& q) { return !q.evaluated(); }));
  r.excluded_single_query_sessions = bucket_by_session_length(sessions).excluded_single_query;
  r.overall = summarize(model, ks);
  for (LengthBucket b : kBuckets) {
    r.buckets[static_cast<int>(b)] = summarize_if(model, ks, [&](const QueryEvaluation& q) { return q.bucket == b; });
  }
  r.positions = position_breakdown(model, ks);

  std::vector<double> entropies;
  for (const auto& q : model) {
    if (q.normalized_entropy) entropies.push_back(*q.normalized_entropy);
  }
  r.entropy = entropy_histogram(entropies, options.entropy_bins);
  if (!entropies.empty()) {
    r.mean_entropy = std::accumulate(entropies.begin(), entropies.end(), 0.0) / static_cast<double>(entropies.size());
  }

  const auto names = metric_names(ks);
  std::map<std::string, const QueryEvaluation*> by_key;
  for (const auto& q : model) {
    if (q.evaluated()) by_key[q.key] = &q;
  }
  for (const auto& [name, evals] : baselines) {
    r.baselines.push_back({name, summarize(evals, ks)});
    std::vector<std::vector<double>> a(names.size()), b(names.size());
    for (const auto& q : evals) {
      const auto it = by_key.find(q.key);
      if (!q.evaluated() || it == by_key.end()) continue;
      const auto va = sample_values(*it->second);
      const auto vb = sample_values(q);
      for (std::size_t m = 0; m < names.size(); ++m) {
        a[m].push_back(va[m]);
        b[m].push_back(vb[m]);
      }
    }
    if (a.front().size() < 2) continue;
    for (std::size_t m = 0; m < names.size(); ++m) {
      r.significance.push_back({"model_vs_" + name, names[m], paired_t_test(a[m], b[m]), 1.0});
    }
  }
  for (auto& s : r.significance) s.p_corrected = bonferroni(s.test.p, r.significance.size());
  return r;
}

std::string samples_csv(std::span<const QueryEvaluation> queries, std::span<const std::size_t> ks) {
  std::string out = "query_key";
  for (const auto& n : metric_names(ks)) out += "," + n;
  out += "\n";
  for (const auto& q : queries) {
    if (!q.evaluated()) continue;
    if (q.key.find_first_of(",\n") != std::string::npos) {
      throw InputError("query key contains a separator: " + q.key);
    }
    out += q.key;
    for (double v : sample_values(q)) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

MetricSamples parse_samples_csv(const std::string& text) {
  MetricSamples s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  auto split = [](const std::string& l) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(l);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!l.empty() && l.back() == ',') fields.emplace_back();
    return fields;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line);
    if (s.metrics.empty()) {
      if (fields.size() < 2 || fields[0] != "query_key") throw ParseError("samples header must start with query_key", lineno);
      s.metrics.assign(fields.begin() + 1, fields.end());
      continue;
    }
    if (fields.size() != s.metrics.size() + 1) throw ParseError("wrong field count in samples row", lineno);
    if (!seen.insert(fields[0]).second) throw ParseError("duplicate query key " + fields[0], lineno);
    std::vector<double> row;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      char* end = nullptr;
      const double v = std::strtod(fields[i].c_str(), &end);
      if (fields[i].empty() || *end != '\0' || !std::isfinite(v)) {
        throw ParseError("not a number: '" + fields[i] + "'", lineno);
      }
      row.push_back(v);
    }
    s.keys.push_back(fields[0]);
    s.rows.push_back(std::move(row));
  }
  if (s.metrics.empty()) throw ParseError("samples file has no header", lineno);
  return s;
}

std::vector<SignificanceResult> compare_samples(const MetricSamples& a, const MetricSamples& b,
                                                const std::string& comparison) {
  std::map<std::string, std::size_t> index_b;
  for (std::size_t i = 0; i < b.keys.size(); ++i) index_b[b.keys[i]] = i;
  std::set<std::string> keys_a(a.keys.begin(), a.keys.end());
  std::vector<std::string> divergent;
  for (const auto& k : a.keys) {
    if (!index_b.count(k)) divergent.push_back(k);
  }
  for (const auto& k : b.keys) {
    if (!keys_a.count(k)) divergent.push_back(k);
  }
  if (!divergent.empty()) {
    std::string msg = "query keys differ between sample files (" + std::to_string(divergent.size()) + "):";
    for (std::size_t i = 0; i < std::min<std::size_t>(divergent.size(), 20); ++i) msg += " " + divergent[i];
    if (divergent.size() > 20) msg += " ...";
    throw InputError(msg);
  }

  std::vector<SignificanceResult> out;
  for (std::size_t ma = 0; ma < a.metrics.size(); ++ma) {
    const auto it = std::find(b.metrics.begin(), b.metrics.end(), a.metrics[ma]);
    if (it == b.metrics.end()) continue;
    const auto mb = static_cast<std::size_t>(it - b.metrics.begin());
    std::vector<double> xa, xb;
    for (std::size_t i = 0; i < a.keys.size(); ++i) {
      xa.push_back(a.rows[i][ma]);
      xb.push_back(b.rows[index_b.at(a.keys[i])][mb]);
    }
    out.push_back({comparison, a.metrics[ma], paired_t_test(xa, xb), 1.0});
  }
  if (out.empty()) throw InputError("sample files share no metric");
  for (auto& r : out) r.p_corrected = bonferroni(r.test.p, out.size());
  return out;
}

std::string significance_json(const std::vector<SignificanceResult>& results) {
  Json j;
  j["comparisons"] = results.size();
  Json arr = Json::array();
  for (const auto& r : results) arr.push_back(significance_entry(r));
  j["results"] = arr;
  return j.dump(2) + "\n";
}

template std::vector<QueryEvaluation> evaluate_model<float>(const ModelParams<float>&, std::span<const Session>,
                                                            const Vocabulary&, const EvalOptions&);
template std::vector<QueryEvaluation> evaluate_model<double>(const ModelParams<double>&, std::span<const Session>,
                                                             const Vocabulary&, const EvalOptions&);

}  // namespace foreranker
