#include "foreranker/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "foreranker/errors.hpp"
#include "foreranker/kernels.hpp"
#include "foreranker/rng.hpp"

namespace foreranker {

TrainMode parse_train_mode(const std::string& name) {
  if (name == "siamese") return TrainMode::kSiamese;
  if (name == "no-future" || name == "no_future") return TrainMode::kNoFuture;
  if (name == "no-peer" || name == "no_peer") return TrainMode::kNoPeer;
  if (name == "no-gating" || name == "no_gating") return TrainMode::kNoGating;
  throw InputError("unknown training mode: " + name);
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSiamese: return "siamese";
    case TrainMode::kNoFuture: return "no-future";
    case TrainMode::kNoPeer: return "no-peer";
    case TrainMode::kNoGating: return "no-gating";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InputError("batch size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("learning rate must be finite and non-negative");
  }
  if (!(warmup_power > 0.0)) throw InputError("warm-up power must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw InputError("label smoothing must lie in [0,1)");
  }
  if (label_smoothing > 0.0 && mode != TrainMode::kNoFuture) {
    throw InputError("label smoothing applies to no-future training only");
  }
}

InstanceSet build_instances(std::span<const Session> sessions, const Vocabulary& vocab,
                            std::size_t max_length, std::size_t future_k, bool with_future) {
  InstanceSet out;
  for (const auto& session : sessions) {
    for (std::size_t i = 0; i < session.turns.size(); ++i) {
      const auto& turn = session.turns[i];
      if (!turn.positive_index) {
        ++out.skipped_no_positive;
        continue;
      }
      const auto history = build_history(session, i);
      TrainingInstance inst;
      inst.positive = turn.positive_index;
      inst.history_inputs = serialize_candidates({&history, turn.query, nullptr}, turn.candidates,
                                                 vocab, max_length);
      if (with_future) {
        const auto future = build_future(session, i, future_k);
        inst.future_inputs = serialize_candidates({&history, turn.query, &future}, turn.candidates,
                                                  vocab, max_length);
      }
      out.instances.push_back(std::move(inst));
    }
  }
  return out;
}

std::string TrainReport::to_jsonl() const {
  using Json = nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  std::string out;
  for (const auto& r : steps) {
    Json j;
    j["step"] = r.step;
    j["loss_f"] = opt(r.loss_f);
    j["loss_h"] = opt(r.loss_h);
    j["nll_f"] = opt(r.nll_f);
    j["nll_h"] = opt(r.nll_h);
    j["kl_f"] = opt(r.kl_f);
    j["kl_h"] = opt(r.kl_h);
    j["alpha_rate"] = opt(r.alpha_rate);
    j["omega"] = opt(r.omega);
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

bool uses_history(StepKind k) { return k != StepKind::kFutureOnly; }
bool uses_future(StepKind k) { return k != StepKind::kHistoryOnly; }
bool updates_history(StepKind k) { return k != StepKind::kFutureOnly; }
bool updates_future(StepKind k) {
  return k == StepKind::kSiamese || k == StepKind::kUngated || k == StepKind::kFutureOnly;
}

template <typename T>
std::vector<std::vector<TokenId>> gather_inputs(std::span<const TrainingInstance> batch,
                                                std::span<const std::size_t> valid, bool future) {
  std::vector<std::vector<TokenId>> out;
  for (std::size_t b : valid) {
    const auto& src = future ? batch[b].future_inputs : batch[b].history_inputs;
    out.insert(out.end(), src.begin(), src.end());
  }
  return out;
}

struct Accumulator {
  double sum = 0.0;
  bool used = false;
  void add(double v) {
    sum += v;
    used = true;
  }
  std::optional<double> mean(std::size_t n) const {
    if (!used || n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

}  // namespace

template <typename T>
SiameseTrainer<T>::SiameseTrainer(const TrainConfig& config, ModelParams<T> history,
                                  std::optional<ModelParams<T>> future)
    : config_(config),
      history_(std::move(history)),
      future_(std::move(future)),
      opt_h_(history_.layout(), config.adam) {
  if (future_) opt_f_.emplace(future_->layout(), config.adam);
  warmup_.power = config.warmup_power;
  warmup_.total_steps = config.warmup_steps.value_or(0);
}

template <typename T>
StepForward<T> SiameseTrainer<T>::forward_step(std::span<const TrainingInstance> batch,
                                               StepKind kind) const {
  if (batch.empty()) throw InputError("training step needs a non-empty batch");
  if (uses_future(kind) && !future_) throw InputError("step kind needs the future twin");
  StepForward<T> fw;
  std::size_t offset = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& inst = batch[b];
    if (!inst.positive) {
      ++fw.skipped;
      continue;
    }
    const std::size_t n = inst.history_inputs.empty() ? inst.future_inputs.size() : inst.history_inputs.size();
    if (*inst.positive >= n) throw InputError("positive index out of range in training instance");
    if (uses_future(kind) && inst.future_inputs.size() != n) {
      throw InputError("training instance lacks future serializations");
    }
    fw.valid.push_back(b);
    fw.offsets.push_back(offset);
    offset += n;
  }
  if (uses_history(kind)) {
    const auto inputs = gather_inputs<T>(batch, fw.valid, false);
    fw.scores_h = forward_batch(history_, inputs, fw.tapes_h);
  }
  if (uses_future(kind)) {
    const auto inputs = gather_inputs<T>(batch, fw.valid, true);
    if (kind == StepKind::kFrozenTeacher) {
      fw.scores_f = score_batch_parallel(*future_, inputs);
    } else {
      fw.scores_f = forward_batch(*future_, inputs, fw.tapes_f);
    }
  }
  return fw;
}

template <typename T>
StepGradients<T> SiameseTrainer<T>::backward_step(std::span<const TrainingInstance> batch,
                                                  const StepForward<T>& fw, StepKind kind,
                                                  double omega) const {
  StepGradients<T> out;
  out.record.skipped = fw.skipped;
  const std::size_t count = fw.valid.size();
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);

  std::vector<T> dscore_h(fw.scores_h.size(), T(0));
  std::vector<T> dscore_f(fw.scores_f.size(), T(0));
  Accumulator loss_f, loss_h, nll_f, nll_h, kl_f, kl_h, alpha_acc;

  for (std::size_t k = 0; k < count; ++k) {
    const auto& inst = batch[fw.valid[k]];
    const std::size_t pos = *inst.positive;
    const std::size_t off = fw.offsets[k];
    const std::size_t n = (uses_history(kind) ? inst.history_inputs : inst.future_inputs).size();

    std::vector<double> sh, sf;
    if (uses_history(kind)) {
      sh.assign(fw.scores_h.begin() + off, fw.scores_h.begin() + off + n);
    }
    if (uses_future(kind)) {
      sf.assign(fw.scores_f.begin() + off, fw.scores_f.begin() + off + n);
    }

    if (kind == StepKind::kHistoryOnly) {
      const auto ph = softmax_scores(sh);
      const double nll = nll_loss(sh, pos);
      nll_h.add(nll);
      if (config_.label_smoothing > 0.0) {
        std::vector<int> labels(n, 0);
        labels[pos] = 1;
        const auto targets = label_smooth_targets(labels, config_.label_smoothing);
        loss_h.add(smoothed_ce_loss(sh, targets));
        for (std::size_t j = 0; j < n; ++j) dscore_h[off + j] = static_cast<T>(inv * (ph[j] - targets[j]));
      } else {
        loss_h.add(nll);
        for (std::size_t j = 0; j < n; ++j) {
          dscore_h[off + j] = static_cast<T>(inv * (ph[j] - (j == pos ? 1.0 : 0.0)));
        }
      }
      continue;
    }
    if (kind == StepKind::kFutureOnly) {
      const auto pf = softmax_scores(sf);
      const double nll = nll_loss(sf, pos);
      nll_f.add(nll);
      loss_f.add(nll);
      for (std::size_t j = 0; j < n; ++j) {
        dscore_f[off + j] = static_cast<T>(inv * (pf[j] - (j == pos ? 1.0 : 0.0)));
      }
      continue;
    }

    const auto ph = softmax_scores(sh);
    const auto pf = softmax_scores(sf);
    const double nh = nll_loss(sh, pos);
    const double nf = nll_loss(sf, pos);
    const double kh = kl_divergence(pf, ph);  // history distils the future twin
    const double kf = kl_divergence(ph, pf);

    LossWeights w;
    if (kind == StepKind::kSiamese) {
      const Gate gate = hooks_.force_gate.value_or(config_.gate_input == GateInput::kRawScore
                                                       ? gate_alpha(sf[pos], sh[pos])
                                                       : gate_alpha(pf[pos], ph[pos]));
      alpha_acc.add(alpha(gate));
      w = gated_weights(gate, omega);
    } else if (kind == StepKind::kUngated) {
      w = ungated_weights(omega);
    } else {  // frozen teacher: only the history twin learns
      w = {0.0, 0.0, omega, 1.0 - omega};
    }
    if (hooks_.disable_distillation) w = {1.0, 0.0, 1.0, 0.0};

    nll_h.add(nh);
    kl_h.add(kh);
    loss_h.add(w.nll_h * nh + w.kl_h * kh);
    if (kind != StepKind::kFrozenTeacher) {
      nll_f.add(nf);
      kl_f.add(kf);
      loss_f.add(w.nll_f * nf + w.kl_f * kf);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double onehot = j == pos ? 1.0 : 0.0;
      dscore_h[off + j] =
          static_cast<T>(inv * (w.nll_h * (ph[j] - onehot) + w.kl_h * (ph[j] - pf[j])));
      if (!dscore_f.empty() && kind != StepKind::kFrozenTeacher) {
        dscore_f[off + j] =
            static_cast<T>(inv * (w.nll_f * (pf[j] - onehot) + w.kl_f * (pf[j] - ph[j])));
      }
    }
  }

  auto& r = out.record;
  r.loss_f = loss_f.mean(count);
  r.loss_h = loss_h.mean(count);
  r.nll_f = nll_f.mean(count);
  r.nll_h = nll_h.mean(count);
  r.kl_f = kl_f.mean(count);
  r.kl_h = kl_h.mean(count);
  r.alpha_rate = alpha_acc.mean(count);
  if (kind == StepKind::kSiamese || kind == StepKind::kUngated || kind == StepKind::kFrozenTeacher) {
    r.omega = omega;
  }

  if (updates_history(kind)) {
    out.grad_h.assign(history_.size(), T(0));
    backward_batch_parallel<T>(history_, fw.tapes_h, dscore_h, out.grad_h);
  }
  if (updates_future(kind) && !hooks_.freeze_future) {
    out.grad_f.assign(future_->size(), T(0));
    backward_batch_parallel<T>(*future_, fw.tapes_f, dscore_f, out.grad_f);
  }
  return out;
}

template <typename T>
void SiameseTrainer<T>::apply(const StepGradients<T>& grads, double lr) {
  if (!grads.grad_h.empty()) opt_h_.step(history_.values(), grads.grad_h, lr);
  if (!grads.grad_f.empty()) {
    if (!future_) throw InputError("future gradient without a future twin");
    opt_f_->step(future_->values(), grads.grad_f, lr);
  }
}

template <typename T>
StepRecord SiameseTrainer<T>::train_step(std::span<const TrainingInstance> batch, StepKind kind,
                                         std::size_t step, double lr) {
  const double omega = warmup_weight(step, warmup_);
  const auto fw = forward_step(batch, kind);
  auto grads = backward_step(batch, fw, kind, omega);
  apply(grads, lr);
  grads.record.step = step;
  return grads.record;
}

namespace {

template <typename T>
void run_phase(SiameseTrainer<T>& trainer, const std::vector<TrainingInstance>& instances,
               StepKind kind, const std::string& shuffle_label, TrainReport& report,
               double& alpha_sum, std::size_t& alpha_count) {
  const auto& config = trainer.config();
  const std::size_t n = instances.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  std::size_t step = 0;
  std::vector<std::size_t> order(n);
  std::vector<TrainingInstance> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(config.seed, shuffle_label + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(instances[order[i]]);
      const double lr = config.decay_learning_rate ? linear_decay(config.learning_rate, step, total)
                                                   : config.learning_rate;
      auto record = trainer.train_step(batch, kind, step, lr);
      if (record.alpha_rate) {
        const std::size_t used = batch.size() - record.skipped;
        alpha_sum += *record.alpha_rate * static_cast<double>(used);
        alpha_count += used;
      }
      epoch_loss += record.loss_h.value_or(record.loss_f.value_or(0.0));
      ++epoch_steps;
      record.step = report.steps.size();
      report.steps.push_back(record);
      ++step;
    }
    if (config.verbose) {
      std::cerr << "[train " << to_string(config.mode) << "] " << shuffle_label << " epoch "
                << epoch + 1 << "/" << config.epochs << " mean loss "
                << epoch_loss / static_cast<double>(std::max<std::size_t>(epoch_steps, 1));
      if (alpha_count > 0) std::cerr << " alpha " << alpha_sum / static_cast<double>(alpha_count);
      std::cerr << '\n';
    }
  }
}

}  // namespace

template <typename T>
TrainResult<T> train(const TrainConfig& input_config, std::span<const Session> sessions,
                     const Vocabulary& vocab, const TrainHooks& hooks) {
  TrainConfig config = input_config;
  config.validate();
  config.arch.vocab_size = vocab.size();
  config.arch.validate();

  const bool with_future = config.mode != TrainMode::kNoFuture;
  auto set = build_instances(sessions, vocab, config.arch.max_length, config.future_k, with_future);
  if (set.instances.empty()) throw InputError("no training instance with a clicked positive");
  if (set.skipped_no_positive > 0 && config.verbose) {
    std::cerr << "[train] skipped " << set.skipped_no_positive << " turns without a click\n";
  }

  const std::size_t per_epoch = (set.instances.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t warmup = config.warmup_steps.value_or(per_epoch);
  config.warmup_steps = warmup;

  auto [history, future] = init_siamese<T>(config.arch, config.seed);
  std::optional<ModelParams<T>> future_twin;
  if (with_future) future_twin = std::move(future);

  SiameseTrainer<T> trainer(config, std::move(history), std::move(future_twin));
  trainer.hooks() = hooks;

  TrainReport report;
  report.mode = config.mode;
  report.instances = set.instances.size();
  report.skipped_instances = set.skipped_no_positive;
  report.warmup_steps = warmup;
  double alpha_sum = 0.0;
  std::size_t alpha_count = 0;

  switch (config.mode) {
    case TrainMode::kSiamese:
      run_phase(trainer, set.instances, StepKind::kSiamese, "shuffle/epoch", report, alpha_sum, alpha_count);
      break;
    case TrainMode::kNoFuture:
      run_phase(trainer, set.instances, StepKind::kHistoryOnly, "shuffle/epoch", report, alpha_sum,
                alpha_count);
      break;
    case TrainMode::kNoGating:
      run_phase(trainer, set.instances, StepKind::kUngated, "shuffle/epoch", report, alpha_sum, alpha_count);
      break;
    case TrainMode::kNoPeer: {
      // The history twin keeps its initial weights through phase 1, so phase 2
      // starts from the same point as every other mode.
      SiameseTrainer<T> teacher_phase(config, trainer.history(), std::move(trainer.future()));
      teacher_phase.hooks() = hooks;
      run_phase(teacher_phase, set.instances, StepKind::kFutureOnly, "shuffle/teacher/epoch", report,
                alpha_sum, alpha_count);
      SiameseTrainer<T> student_phase(config, std::move(teacher_phase.history()),
                                      std::move(teacher_phase.future()));
      student_phase.hooks() = hooks;
      student_phase.set_warmup({warmup, config.warmup_power});
      run_phase(student_phase, set.instances, StepKind::kFrozenTeacher, "shuffle/epoch", report,
                alpha_sum, alpha_count);
      report.mean_alpha.reset();
      return {std::move(student_phase.history()), std::move(student_phase.future()), std::move(report)};
    }
  }
  if (alpha_count > 0) report.mean_alpha = alpha_sum / static_cast<double>(alpha_count);
  return {std::move(trainer.history()), std::move(trainer.future()), std::move(report)};
}

template class SiameseTrainer<float>;
template class SiameseTrainer<double>;
template TrainResult<float> train<float>(const TrainConfig&, std::span<const Session>, const Vocabulary&,
                                         const TrainHooks&);
template TrainResult<double> train<double>(const TrainConfig&, std::span<const Session>, const Vocabulary&,
                                           const TrainHooks&);

}  // namespace foreranker
