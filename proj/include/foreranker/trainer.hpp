#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foreranker/corpus.hpp"
#include "foreranker/encoder.hpp"
#include "foreranker/objectives.hpp"
#include "foreranker/optimizer.hpp"

namespace foreranker {

enum class TrainMode { kSiamese, kNoFuture, kNoPeer, kNoGating };

/// What the gate compares for the positive document: the raw scores of the
/// two twins, or their softmax probabilities over the candidate list.
enum class GateInput { kRawScore, kProbability };

/// Accepts "siamese", "no-future"/"no_future", "no-peer"/"no_peer",
/// "no-gating"/"no_gating".
TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::kSiamese;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  bool decay_learning_rate = true;
  AdamWConfig adam;
  /// Defaults to one epoch's worth of steps.
  std::optional<std::size_t> warmup_steps;
  double warmup_power = 1.0;
  std::size_t future_k = kDefaultFutureTurns;
  std::uint64_t seed = 0;
  /// vocab_size is overwritten from the vocabulary at train time.
  ArchConfig arch;
  /// Label smoothing for the history model in no-future mode.
  double label_smoothing = 0.0;
  GateInput gate_input = GateInput::kRawScore;
  bool verbose = false;

  void validate() const;
};

/// Candidate serializations of one query turn, ready for both twins.
struct TrainingInstance {
  std::vector<std::vector<TokenId>> history_inputs;
  std::vector<std::vector<TokenId>> future_inputs;
  std::optional<std::size_t> positive;
};

struct InstanceSet {
  std::vector<TrainingInstance> instances;
  std::size_t skipped_no_positive = 0;
};

/// Every turn with a first-clicked positive becomes one instance; clickless
/// turns are counted and dropped. Future inputs are built when requested.
InstanceSet build_instances(std::span<const Session> sessions, const Vocabulary& vocab,
                            std::size_t max_length, std::size_t future_k, bool with_future);

/// Batch means of one optimizer step. Absent fields do not apply to the mode.
struct StepRecord {
  std::size_t step = 0;
  std::optional<double> loss_f, loss_h, nll_f, nll_h, kl_f, kl_h, alpha_rate, omega;
  std::size_t skipped = 0;
};

struct TrainReport {
  TrainMode mode = TrainMode::kSiamese;
  std::vector<StepRecord> steps;
  std::size_t instances = 0;
  std::size_t skipped_instances = 0;
  std::size_t warmup_steps = 0;
  /// Mean alpha over all gated steps; absent for modes without gating.
  std::optional<double> mean_alpha;

  /// {step, loss_f, loss_h, nll_f, nll_h, kl_f, kl_h, alpha_rate, omega}, one per line.
  std::string to_jsonl() const;
};

/// Test hooks; all off in normal training.
struct TrainHooks {
  std::optional<Gate> force_gate;
  /// Both twins train on NLL only.
  bool disable_distillation = false;
  bool freeze_future = false;
};

/// Which twins a step touches and how their losses are composed.
enum class StepKind {
  kSiamese,        // gated peer distillation
  kUngated,        // both twins blend NLL and KL by omega
  kHistoryOnly,    // history twin on NLL (or smoothed CE)
  kFutureOnly,     // future twin on NLL
  kFrozenTeacher,  // history twin distils a fixed future twin
};

template <typename T>
struct StepForward {
  std::vector<std::size_t> valid;  // batch positions with a positive
  std::size_t skipped = 0;
  std::vector<T> scores_h, scores_f;
  std::vector<ForwardTape<T>> tapes_h, tapes_f;
  std::vector<std::size_t> offsets;  // first score of each valid instance
};

template <typename T>
struct StepGradients {
  std::vector<T> grad_h, grad_f;  // empty when the twin is not updated
  StepRecord record;
};

/// The two twins plus their optimizers.
template <typename T>
class SiameseTrainer {
 public:
  SiameseTrainer(const TrainConfig& config, ModelParams<T> history,
                 std::optional<ModelParams<T>> future);

  StepForward<T> forward_step(std::span<const TrainingInstance> batch, StepKind kind) const;
  /// Loss composition and backpropagation. Reads only the forward results
  /// and each twin's own parameters.
  StepGradients<T> backward_step(std::span<const TrainingInstance> batch, const StepForward<T>& fw,
                                 StepKind kind, double omega) const;
  void apply(const StepGradients<T>& grads, double lr);

  /// forward_step + backward_step + apply.
  StepRecord train_step(std::span<const TrainingInstance> batch, StepKind kind, std::size_t step,
                        double lr);

  const ModelParams<T>& history() const { return history_; }
  const std::optional<ModelParams<T>>& future() const { return future_; }
  ModelParams<T>& history() { return history_; }
  std::optional<ModelParams<T>>& future() { return future_; }
  TrainHooks& hooks() { return hooks_; }
  const TrainConfig& config() const { return config_; }
  std::size_t warmup_steps() const { return warmup_.total_steps; }
  void set_warmup(WarmupSchedule w) { warmup_ = w; }

 private:
  TrainConfig config_;
  ModelParams<T> history_;
  std::optional<ModelParams<T>> future_;
  AdamW<T> opt_h_;
  std::optional<AdamW<T>> opt_f_;
  WarmupSchedule warmup_;
  TrainHooks hooks_;
};

template <typename T>
struct TrainResult {
  ModelParams<T> history;  // the deployable ForeRanker
  std::optional<ModelParams<T>> future;
  TrainReport report;
};

/// Runs config.mode over the sessions. Throws InputError when no instance
/// with a positive remains.
template <typename T>
TrainResult<T> train(const TrainConfig& config, std::span<const Session> sessions,
                     const Vocabulary& vocab, const TrainHooks& hooks = {});

/// Two phases: the future twin alone on NLL, then the history twin distils
/// the frozen future twin.
template <typename T>
TrainResult<T> train_no_peer(TrainConfig config, std::span<const Session> sessions,
                             const Vocabulary& vocab, const TrainHooks& hooks = {}) {
  config.mode = TrainMode::kNoPeer;
  return train<T>(config, sessions, vocab, hooks);
}

template <typename T>
TrainResult<T> train_no_gating(TrainConfig config, std::span<const Session> sessions,
                               const Vocabulary& vocab, const TrainHooks& hooks = {}) {
  config.mode = TrainMode::kNoGating;
  return train<T>(config, sessions, vocab, hooks);
}

}  // namespace foreranker
