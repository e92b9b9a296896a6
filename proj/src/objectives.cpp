#include "foreranker/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "foreranker/errors.hpp"

namespace foreranker {

namespace {

constexpr double kSumTolerance = 1e-9;

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

double log_sum_exp(std::span<const double> scores) {
  const double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - m);
  return m + std::log(sum);
}

}  // namespace

RelevanceDistribution::RelevanceDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InputError("relevance distribution must be non-empty");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) throw InputError("probabilities do not sum to 1");
}

RelevanceDistribution softmax_scores(std::span<const double> scores) {
  if (scores.empty()) throw InputError("softmax of an empty score vector");
  require_finite(scores, "softmax");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - m);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return RelevanceDistribution(std::move(p));
}

double nll_loss(std::span<const double> scores, std::size_t positive) {
  if (positive >= scores.size()) throw InputError("positive index out of range");
  const auto p = softmax_scores(scores);
  // Same arithmetic as kl_divergence(onehot, p) so the two agree bitwise.
  if (p[positive] > 0.0) return 1.0 * (0.0 - std::log(p[positive]));
  return log_sum_exp(scores) - scores[positive];
}

double kl_divergence(const RelevanceDistribution& target, const RelevanceDistribution& approx) {
  if (target.size() != approx.size()) throw InputError("KL: distribution lengths differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    if (approx[i] == 0.0) throw NumericError("KL: approximating distribution has a zero entry");
    kl += target[i] * (std::log(target[i]) - std::log(approx[i]));
  }
  // Rounding can leave -1e-17 for equal inputs.
  return std::max(kl, 0.0);
}

Gate gate_alpha(double future_positive_score, double history_positive_score) {
  if (!std::isfinite(future_positive_score) || !std::isfinite(history_positive_score)) {
    throw NumericError("gate: non-finite score");
  }
  return future_positive_score > history_positive_score ? Gate::kFutureTeaches
                                                        : Gate::kHistoryTeaches;
}

LossWeights gated_weights(Gate gate, double omega) {
  if (gate == Gate::kFutureTeaches) return {1.0, 0.0, omega, 1.0 - omega};
  return {omega, 1.0 - omega, 1.0, 0.0};
}

LossWeights ungated_weights(double omega) { return {omega, 1.0 - omega, omega, 1.0 - omega}; }

SiameseLoss combined_losses(Gate gate, double nll_f, double kl_f, double nll_h, double kl_h,
                            double omega) {
  if (!(omega >= 0.0 && omega <= 1.0)) throw InputError("omega outside [0,1]");
  if (!(nll_f >= 0.0 && kl_f >= 0.0 && nll_h >= 0.0 && kl_h >= 0.0)) {
    throw InputError("losses must be non-negative");
  }
  const auto w = gated_weights(gate, omega);
  return {w.nll_f * nll_f + w.kl_f * kl_f, w.nll_h * nll_h + w.kl_h * kl_h};
}

double warmup_weight(std::size_t step, const WarmupSchedule& schedule) {
  if (!(schedule.power > 0.0)) throw InputError("warm-up power must be positive");
  if (schedule.total_steps == 0) return 0.0;
  const double t = static_cast<double>(std::min(step, schedule.total_steps));
  return std::pow(1.0 - t / static_cast<double>(schedule.total_steps), schedule.power);
}

std::vector<double> label_smooth_targets(std::span<const int> labels, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("label smoothing gamma must lie in [0,1)");
  if (labels.empty()) throw InputError("label smoothing needs at least one label");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives != 1) throw InputError("label smoothing needs exactly one positive label");
  const double uniform = gamma / static_cast<double>(labels.size());
  std::vector<double> out(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    out[j] = static_cast<double>(labels[j]) * (1.0 - gamma) + uniform;
  }
  return out;
}

double smoothed_ce_loss(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) throw InputError("cross-entropy: length mismatch");
  if (scores.empty()) throw InputError("cross-entropy of an empty score vector");
  require_finite(scores, "cross-entropy");
  double sum = 0.0;
  for (double t : targets) sum += t;
  if (std::abs(sum - 1.0) > kSumTolerance) throw InputError("cross-entropy targets must sum to 1");
  const double lse = log_sum_exp(scores);
  double loss = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) loss -= targets[j] * (scores[j] - lse);
  return loss;
}

double entropy(const RelevanceDistribution& dist, bool normalized) {
  double h = 0.0;
  for (double p : dist.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  h = std::max(h, 0.0);
  if (!normalized) return h;
  if (dist.size() < 2) return 0.0;
  return std::min(1.0, h / std::log(static_cast<double>(dist.size())));
}

std::vector<double> nll_grad(std::span<const double> scores, std::size_t positive) {
  if (positive >= scores.size()) throw InputError("positive index out of range");
  const auto p = softmax_scores(scores);
  std::vector<double> g(p.probs().begin(), p.probs().end());
  g[positive] -= 1.0;
  return g;
}

std::vector<double> kl_grad(const RelevanceDistribution& target, std::span<const double> scores) {
  if (target.size() != scores.size()) throw InputError("KL gradient: length mismatch");
  const auto p = softmax_scores(scores);
  std::vector<double> g(scores.size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = p[j] - target[j];
  return g;
}

std::vector<double> smoothed_ce_grad(std::span<const double> scores, std::span<const double> targets) {
  if (targets.size() != scores.size()) throw InputError("cross-entropy gradient: length mismatch");
  const auto p = softmax_scores(scores);
  std::vector<double> g(scores.size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = p[j] - targets[j];
  return g;
}

}  // namespace foreranker
