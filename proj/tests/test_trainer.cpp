#include <doctest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "foreranker/errors.hpp"
#include "foreranker/generator.hpp"
#include "foreranker/kernels.hpp"
#include "foreranker/trainer.hpp"
#include "helpers.hpp"

using namespace foreranker;

namespace {

struct Fixture {
  std::vector<Session> sessions;
  Vocabulary vocab;

  explicit Fixture(std::size_t count = 40, std::uint64_t seed = 3) {
    GeneratorConfig g;
    g.sessions = count;
    sessions = generate_corpus(g, seed);
    vocab = Vocabulary::from_sessions(sessions);
  }
};

TrainConfig small_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 1;
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  c.seed = 5;
  c.arch = testing_support::tiny_arch();
  c.arch.max_length = 64;
  return c;
}

template <typename T>
SiameseTrainer<T> make_trainer(const TrainConfig& config, const Vocabulary& vocab, bool with_future) {
  auto arch = config.arch;
  arch.vocab_size = vocab.size();
  auto [h, f] = init_siamese<T>(arch, config.seed);
  std::optional<ModelParams<T>> future;
  if (with_future) future = std::move(f);
  return SiameseTrainer<T>(config, std::move(h), std::move(future));
}

std::vector<TrainingInstance> first_instances(const Fixture& fx, const TrainConfig& c, std::size_t n) {
  auto set = build_instances(fx.sessions, fx.vocab, c.arch.max_length, c.future_k, true);
  set.instances.resize(std::min(n, set.instances.size()));
  return set.instances;
}

template <typename T>
double mean_nll(const ModelParams<T>& params, std::span<const TrainingInstance> batch, bool future) {
  double sum = 0.0;
  for (const auto& inst : batch) {
    const auto& inputs = future ? inst.future_inputs : inst.history_inputs;
    auto s = score_batch_serial(params, inputs);
    std::vector<double> scores(s.begin(), s.end());
    sum += nll_loss(scores, *inst.positive);
  }
  return sum / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("mode names") {
  CHECK(parse_train_mode("siamese") == TrainMode::kSiamese);
  CHECK(parse_train_mode("no-future") == TrainMode::kNoFuture);
  CHECK(parse_train_mode("no_peer") == TrainMode::kNoPeer);
  CHECK(parse_train_mode("no-gating") == TrainMode::kNoGating);
  CHECK_THROWS_AS(parse_train_mode("bogus"), InputError);
  for (auto m : {TrainMode::kSiamese, TrainMode::kNoFuture, TrainMode::kNoPeer, TrainMode::kNoGating}) {
    CHECK(parse_train_mode(to_string(m)) == m);
  }
}

TEST_CASE("config validation") {
  auto c = small_config(TrainMode::kSiamese);
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = small_config(TrainMode::kSiamese);
  c.label_smoothing = 0.1;
  CHECK_THROWS_AS(c.validate(), InputError);
  c.mode = TrainMode::kNoFuture;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("instances skip clickless turns") {
  std::vector<Session> sessions{testing_support::make_session("a", {true, false, true}),
                                testing_support::make_session("b", {false})};
  auto vocab = Vocabulary::from_sessions(sessions);
  auto set = build_instances(sessions, vocab, 64, 2, true);
  CHECK(set.instances.size() == 2);
  CHECK(set.skipped_no_positive == 2);
  CHECK(set.instances[0].history_inputs.size() == 3);
  CHECK(set.instances[0].future_inputs.size() == 3);
  CHECK(build_instances(sessions, vocab, 64, 2, false).instances[0].future_inputs.empty());

  std::vector<Session> none{testing_support::make_session("c", {false, false})};
  CHECK_THROWS_AS(train<double>(small_config(TrainMode::kSiamese), none, Vocabulary::from_sessions(none)),
                  InputError);
}

TEST_CASE("a batch entry without a positive is skipped and counted") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  auto trainer = make_trainer<double>(c, fx.vocab, true);
  auto batch = first_instances(fx, c, 4);
  batch[1].positive.reset();
  auto fw = trainer.forward_step(batch, StepKind::kSiamese);
  CHECK(fw.skipped == 1);
  CHECK(fw.valid.size() == 3);
  auto record = trainer.train_step(batch, StepKind::kSiamese, 0, 1e-3);
  CHECK(record.skipped == 1);
}

TEST_CASE("zero learning rate leaves both twins unchanged but reports losses") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  auto trainer = make_trainer<double>(c, fx.vocab, true);
  const auto h0 = trainer.history();
  const auto f0 = *trainer.future();
  auto batch = first_instances(fx, c, 8);
  auto record = trainer.train_step(batch, StepKind::kSiamese, 3, 0.0);
  CHECK(trainer.history() == h0);
  CHECK(*trainer.future() == f0);
  REQUIRE(record.loss_h.has_value());
  CHECK(*record.loss_h > 0.0);
  CHECK(record.nll_f.has_value());
  CHECK(record.alpha_rate.has_value());
}

TEST_CASE("a small step lowers the teacher's NLL on its batch") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  c.adam.weight_decay = 0.0;
  auto batch = first_instances(fx, c, 8);
  for (Gate gate : {Gate::kFutureTeaches, Gate::kHistoryTeaches}) {
    auto trainer = make_trainer<double>(c, fx.vocab, true);
    trainer.set_warmup({0, 1.0});
    trainer.hooks().force_gate = gate;
    const bool future_teaches = gate == Gate::kFutureTeaches;
    const double before = future_teaches ? mean_nll(*trainer.future(), batch, true)
                                         : mean_nll(trainer.history(), batch, false);
    trainer.train_step(batch, StepKind::kSiamese, 0, 1e-4);
    const double after = future_teaches ? mean_nll(*trainer.future(), batch, true)
                                        : mean_nll(trainer.history(), batch, false);
    CHECK(after <= before);
  }
}

TEST_CASE("forcing alpha to 1 composes pure NLL for the future twin and pure KL for the history twin") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  auto trainer = make_trainer<double>(c, fx.vocab, true);
  trainer.set_warmup({0, 1.0});
  trainer.hooks().force_gate = Gate::kFutureTeaches;
  auto batch = first_instances(fx, c, 8);
  auto record = trainer.train_step(batch, StepKind::kSiamese, 0, 1e-3);
  CHECK(*record.loss_f == *record.nll_f);
  CHECK(*record.loss_h == doctest::Approx(*record.kl_h).epsilon(1e-15));
  CHECK(*record.alpha_rate == 1.0);
  CHECK(*record.omega == 0.0);

  trainer.hooks().force_gate = Gate::kHistoryTeaches;
  record = trainer.train_step(batch, StepKind::kSiamese, 1, 1e-3);
  CHECK(*record.loss_h == *record.nll_h);
  CHECK(*record.loss_f == doctest::Approx(*record.kl_f).epsilon(1e-15));
  CHECK(*record.alpha_rate == 0.0);
}

TEST_CASE("the history gradient ignores the future twin's weights beyond its detached scores") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  auto trainer = make_trainer<double>(c, fx.vocab, true);
  auto batch = first_instances(fx, c, 8);
  const auto fw = trainer.forward_step(batch, StepKind::kSiamese);
  const auto reference = trainer.backward_step(batch, fw, StepKind::kSiamese, 0.3);
  for (auto& w : trainer.future()->values()) w *= -3.0;
  const auto perturbed = trainer.backward_step(batch, fw, StepKind::kSiamese, 0.3);
  CHECK(perturbed.grad_h == reference.grad_h);
  CHECK(perturbed.grad_f != reference.grad_f);
}

TEST_CASE("the gate follows the per-query scores") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  auto trainer = make_trainer<double>(c, fx.vocab, true);
  // Make the twins differ so the gate has something to decide.
  Rng rng(1);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  for (auto& w : trainer.future()->values()) w += jitter(rng);
  auto batch = first_instances(fx, c, 16);
  const auto fw = trainer.forward_step(batch, StepKind::kSiamese);
  double expected = 0.0;
  for (std::size_t k = 0; k < fw.valid.size(); ++k) {
    const std::size_t at = fw.offsets[k] + *batch[fw.valid[k]].positive;
    expected += alpha(gate_alpha(fw.scores_f[at], fw.scores_h[at]));
  }
  expected /= static_cast<double>(fw.valid.size());
  const auto g = trainer.backward_step(batch, fw, StepKind::kSiamese, 0.0);
  CHECK(*g.record.alpha_rate == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("the frozen teacher stays byte-identical") {
  Fixture fx;
  auto c = small_config(TrainMode::kNoPeer);
  auto trainer = make_trainer<double>(c, fx.vocab, true);
  const auto teacher = *trainer.future();
  const auto student = trainer.history();
  auto batch = first_instances(fx, c, 8);
  for (std::size_t s = 0; s < 3; ++s) trainer.train_step(batch, StepKind::kFrozenTeacher, s, 1e-2);
  CHECK(*trainer.future() == teacher);
  CHECK(!(trainer.history() == student));
}

TEST_CASE("a uniform frozen teacher gives a KL target of uniform") {
  Fixture fx;
  auto c = small_config(TrainMode::kNoPeer);
  auto trainer = make_trainer<double>(c, fx.vocab, true);
  trainer.future()->zero_head_output();
  auto batch = first_instances(fx, c, 8);
  const auto fw = trainer.forward_step(batch, StepKind::kFrozenTeacher);
  const auto g = trainer.backward_step(batch, fw, StepKind::kFrozenTeacher, 0.0);
  double expected = 0.0;
  for (std::size_t k = 0; k < fw.valid.size(); ++k) {
    const std::size_t n = batch[fw.valid[k]].history_inputs.size();
    std::vector<double> sh(fw.scores_h.begin() + fw.offsets[k], fw.scores_h.begin() + fw.offsets[k] + n);
    expected += kl_divergence(RelevanceDistribution(std::vector<double>(n, 1.0 / n)), softmax_scores(sh));
  }
  expected /= static_cast<double>(fw.valid.size());
  CHECK(*g.record.kl_h == doctest::Approx(expected).epsilon(1e-14));
  CHECK(*g.record.loss_h == doctest::Approx(expected).epsilon(1e-14));
  CHECK(g.grad_f.empty());
}

TEST_CASE("training is deterministic") {
  Fixture fx;
  for (auto mode : {TrainMode::kSiamese, TrainMode::kNoPeer}) {
    auto c = small_config(mode);
    auto a = train<float>(c, fx.sessions, fx.vocab);
    auto b = train<float>(c, fx.sessions, fx.vocab);
    CHECK(a.history == b.history);
    CHECK(a.report.to_jsonl() == b.report.to_jsonl());
  }
}

TEST_CASE("zero epochs return the initial twins") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  c.epochs = 0;
  auto r = train<double>(c, fx.sessions, fx.vocab);
  auto arch = c.arch;
  arch.vocab_size = fx.vocab.size();
  auto [h, f] = init_siamese<double>(arch, c.seed);
  CHECK(r.history == h);
  CHECK(*r.future == f);
  CHECK(r.report.steps.empty());
}

TEST_CASE("no-future trains one twin on NLL only") {
  Fixture fx;
  auto c = small_config(TrainMode::kNoFuture);
  auto r = train<double>(c, fx.sessions, fx.vocab);
  CHECK(!r.future.has_value());
  CHECK(!r.report.mean_alpha.has_value());
  REQUIRE(!r.report.steps.empty());
  for (const auto& s : r.report.steps) {
    CHECK(!s.nll_f.has_value());
    CHECK(!s.kl_h.has_value());
    CHECK(*s.loss_h == *s.nll_h);
  }
}

TEST_CASE("no-future equals siamese with distillation off and the future twin frozen") {
  Fixture fx;
  auto base = small_config(TrainMode::kNoFuture);
  base.epochs = 2;
  auto plain = train<double>(base, fx.sessions, fx.vocab);
  auto siamese = base;
  siamese.mode = TrainMode::kSiamese;
  TrainHooks hooks;
  hooks.disable_distillation = true;
  hooks.freeze_future = true;
  auto hooked = train<double>(siamese, fx.sessions, fx.vocab, hooks);
  CHECK(hooked.history == plain.history);
  auto arch = base.arch;
  arch.vocab_size = fx.vocab.size();
  CHECK(*hooked.future == init_params<double>(arch, base.seed));
}

TEST_CASE("no-gating reports no alpha and reduces to independent NLL twins at omega 1") {
  Fixture fx;
  auto c = small_config(TrainMode::kNoGating);
  auto r = train<double>(c, fx.sessions, fx.vocab);
  CHECK(!r.report.mean_alpha.has_value());
  for (const auto& s : r.report.steps) CHECK(!s.alpha_rate.has_value());
  const auto log = r.report.to_jsonl();
  CHECK(nlohmann::json::parse(log.substr(0, log.find('\n')))["alpha_rate"].is_null());

  // One full-batch step: omega is exactly 1 at step 0.
  c.batch_size = 100000;
  auto ungated = train<double>(c, fx.sessions, fx.vocab);
  auto s = c;
  s.mode = TrainMode::kSiamese;
  TrainHooks hooks;
  hooks.disable_distillation = true;
  auto independent = train<double>(s, fx.sessions, fx.vocab, hooks);
  CHECK(ungated.history == independent.history);
  CHECK(*ungated.future == *independent.future);
}

TEST_CASE("mean alpha lies strictly between 0 and 1 on an informative-future corpus") {
  Fixture fx(150, 8);
  auto c = small_config(TrainMode::kSiamese);
  c.epochs = 2;
  auto r = train<float>(c, fx.sessions, fx.vocab);
  REQUIRE(r.report.mean_alpha.has_value());
  CHECK(*r.report.mean_alpha > 0.0);
  CHECK(*r.report.mean_alpha < 1.0);
}

TEST_CASE("the report has one line per step with every field") {
  Fixture fx;
  auto c = small_config(TrainMode::kSiamese);
  auto r = train<double>(c, fx.sessions, fx.vocab);
  std::istringstream in(r.report.to_jsonl());
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["step"] == lines);
    for (const char* key : {"loss_f", "loss_h", "nll_f", "nll_h", "kl_f", "kl_h", "alpha_rate", "omega"}) {
      CHECK_MESSAGE(j.contains(key), key);
      CHECK(j[key].is_number());
    }
  }
  CHECK(lines == r.report.steps.size());
  const std::size_t per_epoch = (r.report.instances + c.batch_size - 1) / c.batch_size;
  CHECK(lines == per_epoch * c.epochs);
  CHECK(r.report.warmup_steps == per_epoch);
  CHECK(r.report.steps.front().omega == 1.0);
}

TEST_CASE("label smoothing changes the no-future loss") {
  Fixture fx;
  auto c = small_config(TrainMode::kNoFuture);
  c.label_smoothing = 0.2;
  auto r = train<double>(c, fx.sessions, fx.vocab);
  for (const auto& s : r.report.steps) CHECK(*s.loss_h != *s.nll_h);
}
