#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace foreranker {

/// Probabilities over one query's candidate list.
class RelevanceDistribution {
 public:
  /// Throws InputError unless every entry is in [0,1] and the sum is 1
  /// within 1e-9.
  explicit RelevanceDistribution(std::vector<double> probs);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

/// Which twin acts as teacher for one query: the one scoring the positive
/// strictly higher, ties going to the history model.
enum class Gate : int { kHistoryTeaches = 0, kFutureTeaches = 1 };

inline double alpha(Gate g) { return g == Gate::kFutureTeaches ? 1.0 : 0.0; }

struct WarmupSchedule {
  std::size_t total_steps = 0;
  double power = 1.0;
};

/// Max-shifted softmax. Throws NumericError on non-finite input.
RelevanceDistribution softmax_scores(std::span<const double> scores);

/// -log softmax(scores)[positive].
double nll_loss(std::span<const double> scores, std::size_t positive);

/// sum_j target_j * (log target_j - log approx_j), with 0 log 0 = 0.
double kl_divergence(const RelevanceDistribution& target, const RelevanceDistribution& approx);

Gate gate_alpha(double future_positive_score, double history_positive_score);

struct SiameseLoss {
  double future = 0.0;
  double history = 0.0;
};

/// Per-term weights of one query's pair of losses, i.e.
///   L_f = nll_f_w * nll_f + kl_f_w * kl_f and likewise for L_h.
struct LossWeights {
  double nll_f = 0.0;
  double kl_f = 0.0;
  double nll_h = 0.0;
  double kl_h = 0.0;
};

/// The teacher trains on its NLL. The student trains on its KL towards the
/// teacher, blended with its own NLL by the warm-up weight omega.
LossWeights gated_weights(Gate gate, double omega);
/// Both twins blend NLL and KL by omega; no gate.
LossWeights ungated_weights(double omega);

SiameseLoss combined_losses(Gate gate, double nll_f, double kl_f, double nll_h, double kl_h,
                            double omega);

/// omega = (1 - min(t, T) / T)^p; T = 0 gives 0 everywhere.
double warmup_weight(std::size_t step, const WarmupSchedule& schedule);

/// y * (1 - gamma) + gamma / N. Requires exactly one label equal to 1.
std::vector<double> label_smooth_targets(std::span<const int> labels, double gamma);

/// -sum_j target_j * log softmax(scores)_j.
double smoothed_ce_loss(std::span<const double> scores, std::span<const double> targets);

/// Shannon entropy in nats; `normalized` divides by ln N.
double entropy(const RelevanceDistribution& dist, bool normalized = false);

// Gradients with respect to the raw scores. Teacher distributions are
// constants here: no gradient flows into them.

/// softmax(scores) - onehot(positive)
std::vector<double> nll_grad(std::span<const double> scores, std::size_t positive);
/// d/ds KL(target || softmax(s)) = softmax(s) - target
std::vector<double> kl_grad(const RelevanceDistribution& target, std::span<const double> scores);
/// softmax(s) - targets
std::vector<double> smoothed_ce_grad(std::span<const double> scores, std::span<const double> targets);

}  // namespace foreranker
