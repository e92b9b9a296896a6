// foreranker: synthetic session logs, siamese training, evaluation and analysis.
//
// Exit codes: 0 success, 1 usage error, 2 data/format/IO error, 3 numeric failure.

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "foreranker/errors.hpp"
#include "json_config.hpp"

namespace fr = foreranker;
namespace cli = foreranker::cli;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

bool wants_json_config(int argc, char** argv) {
  auto is_json = [](const std::string& p) { return p.size() >= 5 && p.compare(p.size() - 5, 5, ".json") == 0; };
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc && is_json(argv[i + 1])) return true;
    if (a.rfind("--config=", 0) == 0 && is_json(a.substr(9))) return true;
  }
  return false;
}

// The first argument naming a subcommand, or "" when there is none.
std::string active_subcommand(int argc, char** argv, const std::vector<CLI::App*>& subs) {
  for (int i = 1; i < argc; ++i) {
    for (const auto* sub : subs) {
      if (sub->get_name() == argv[i]) return argv[i];
    }
  }
  return "";
}

void add_shared(CLI::App* sub, std::uint64_t& seed, std::string& out_dir, bool out_dir_required) {
  sub->add_option("--seed", seed, "Seed for all randomness")->capture_default_str();
  auto* o = sub->add_option("--out-dir", out_dir, "Output directory");
  if (out_dir_required) o->required();
}

void add_arch(CLI::App* sub, fr::ArchConfig& a) {
  sub->add_option("--d-model", a.d_model, "Model width")->capture_default_str();
  sub->add_option("--heads", a.heads, "Attention heads")->capture_default_str();
  sub->add_option("--ff-width", a.ff_width, "Feed-forward width")->capture_default_str();
  sub->add_option("--layers", a.layers, "Encoder layers")->capture_default_str();
  sub->add_option("--max-length", a.max_length, "Maximum sequence length")->capture_default_str();
  sub->add_option("--head-hidden", a.head_hidden, "Hidden width of the scoring head")->capture_default_str();
}

const std::vector<std::string> kModes = {"siamese", "no-future", "no-peer", "no-gating",
                                         "no_future", "no_peer", "no_gating"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware document ranking with siamese future-aware training"};
  app.require_subcommand(1);
  // --config lives on the root app; subcommands pass it up.
  app.fallthrough();
  app.set_config("--config", "", "TOML or JSON file with option values for the subcommand; flags take precedence");

  // gen-data
  cli::GenDataOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic session corpus");
  add_shared(g, gen.seed, gen.out_dir, false);
  auto& gc = gen.generator;
  g->add_option("--out", gen.out, "Training corpus path (JSONL)")->required();
  g->add_option("--sessions", gc.sessions, "Training sessions")->capture_default_str();
  g->add_option("--test-sessions", gen.test_sessions, "Test sessions drawn from the same world")->capture_default_str();
  g->add_option("--test-out", gen.test_out, "Test corpus path");
  g->add_option("--intents", gc.intents)->capture_default_str();
  g->add_option("--cluster-size", gc.cluster_size)->capture_default_str();
  g->add_option("--intent-words", gc.intent_words)->capture_default_str();
  g->add_option("--cluster-words", gc.cluster_words)->capture_default_str();
  g->add_option("--background-words", gc.background_words)->capture_default_str();
  g->add_option("--docs-per-intent", gc.docs_per_intent)->capture_default_str();
  g->add_option("--mean-queries", gc.mean_queries)->capture_default_str();
  g->add_option("--min-queries", gc.min_queries)->capture_default_str();
  g->add_option("--max-queries", gc.max_queries)->capture_default_str();
  g->add_option("--candidates", gc.candidates, "Candidates per query (N)")->capture_default_str();
  g->add_option("--drift", gc.drift, "Probability of an intent switch")->capture_default_str();
  g->add_option("--specificity-base", gc.specificity_base)->capture_default_str();
  g->add_option("--specificity-growth", gc.specificity_growth)->capture_default_str();
  g->add_option("--query-cluster-prob", gc.query_cluster_prob)->capture_default_str();
  g->add_option("--doc-intent-prob", gc.doc_intent_prob)->capture_default_str();
  g->add_option("--doc-cluster-prob", gc.doc_cluster_prob)->capture_default_str();
  g->add_option("--doc-min-length", gc.doc_min_length)->capture_default_str();
  g->add_option("--doc-max-length", gc.doc_max_length)->capture_default_str();
  g->add_option("--bm25-distractors", gc.bm25_distractor_fraction, "Share of BM25-retrieved distractors")
      ->capture_default_str();
  g->add_option("--no-click-prob", gc.no_click_prob)->capture_default_str();
  g->add_option("--click-noise", gc.click_noise)->capture_default_str();

  // train
  cli::TrainOptions tr;
  std::string mode = "siamese";
  std::optional<std::size_t> warmup;
  std::string gate_input = "raw";
  bool no_decay = false, quiet = false;
  auto* t = app.add_subcommand("train", "Train in one of the four modes");
  add_shared(t, tr.seed, tr.out_dir, true);
  auto& tc = tr.config;
  t->add_option("--train", tr.train, "Training corpus (JSONL)")->required();
  t->add_option("--mode", mode, "siamese | no-future | no-peer | no-gating")
      ->check(CLI::IsMember(kModes))
      ->capture_default_str();
  t->add_option("--epochs", tc.epochs)->capture_default_str();
  t->add_option("--batch-size", tc.batch_size)->capture_default_str();
  t->add_option("--lr", tc.learning_rate, "Peak learning rate")->capture_default_str();
  t->add_flag("--no-lr-decay", no_decay, "Keep the learning rate constant");
  t->add_option("--weight-decay", tc.adam.weight_decay)->capture_default_str();
  t->add_option("--warmup-steps", warmup, "Warm-up length in steps (default: one epoch)");
  t->add_option("--warmup-power", tc.warmup_power)->capture_default_str();
  t->add_option("--future-k", tc.future_k, "Future turns visible to the future-aware twin")->capture_default_str();
  t->add_option("--label-smoothing", tc.label_smoothing, "Label smoothing for no-future mode")
      ->capture_default_str();
  t->add_option("--gate-input", gate_input, "Gate on raw scores or on softmax probabilities")
      ->check(CLI::IsMember({"raw", "probability"}))
      ->capture_default_str();
  t->add_option("--precision", tr.precision)->check(CLI::IsMember({"float", "double"}))->capture_default_str();
  t->add_flag("--quiet", quiet, "No per-epoch progress");
  add_arch(t, tc.arch);

  // eval
  cli::EvalCommandOptions ev;
  bool no_baselines = false;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  add_shared(e, ev.seed, ev.out_dir, true);
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--test", ev.test, "Evaluation corpus (JSONL)")->required();
  e->add_option("--vocab", ev.vocab, "Vocabulary (default: vocab.txt beside the checkpoint)");
  e->add_flag("--with-future", ev.eval.with_future, "Score with future context (future-aware twin)");
  e->add_option("--future-k", ev.eval.future_k)->capture_default_str();
  e->add_option("--ndcg-k", ev.eval.ndcg_ks, "NDCG cutoffs")->delimiter(',')->capture_default_str();
  e->add_option("--bins", ev.eval.entropy_bins, "Entropy histogram bins")->check(CLI::PositiveNumber)
      ->capture_default_str();
  e->add_flag("--no-baselines", no_baselines, "Skip the random and BM25 baselines");
  e->add_option("--precision", ev.precision)->check(CLI::IsMember({"float", "double"}))->capture_default_str();

  // compare
  cli::CompareOptions cmp;
  auto* c = app.add_subcommand("compare", "Paired t-tests between two per-query sample files");
  add_shared(c, cmp.seed, cmp.out_dir, true);
  c->add_option("--a", cmp.a, "First samples.csv")->required();
  c->add_option("--b", cmp.b, "Second samples.csv")->required();
  c->add_option("--label-a", cmp.label_a)->capture_default_str();
  c->add_option("--label-b", cmp.label_b)->capture_default_str();

  // analyze-entropy
  cli::EntropyOptions ent;
  auto* a = app.add_subcommand("analyze-entropy", "Normalized prediction entropy histograms");
  add_shared(a, ent.seed, ent.out_dir, true);
  a->add_option("--checkpoint", ent.checkpoints, "One or two checkpoints")->required()->expected(1, 2);
  a->add_option("--label", ent.labels, "Label per checkpoint");
  a->add_option("--test", ent.test, "Evaluation corpus (JSONL)")->required();
  a->add_option("--vocab", ent.vocab, "Vocabulary (default: vocab.txt beside each checkpoint)");
  a->add_option("--bins", ent.bins)->check(CLI::PositiveNumber)->capture_default_str();
  a->add_flag("--with-future", ent.with_future);
  a->add_option("--future-k", ent.future_k)->capture_default_str();
  a->add_option("--precision", ent.precision)->check(CLI::IsMember({"float", "double"}))->capture_default_str();

  std::shared_ptr<CLI::Config> format = std::make_shared<CLI::ConfigTOML>();
  if (wants_json_config(argc, argv)) format = std::make_shared<cli::JsonConfig>();
  app.config_formatter(std::make_shared<cli::SubcommandConfig>(format, active_subcommand(argc, argv, {g, t, e, c, a})));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  cli::Invocation inv;
  inv.args.assign(argv + 1, argv + argc);
  try {
    if (g->parsed()) {
      inv.subcommand = "gen-data";
      inv.resolved_config = g->config_to_str(true, false);
      cli::run_gen_data(gen, inv);
    } else if (t->parsed()) {
      inv.subcommand = "train";
      inv.resolved_config = t->config_to_str(true, false);
      tc.mode = fr::parse_train_mode(mode);
      tc.warmup_steps = warmup;
      tc.decay_learning_rate = !no_decay;
      tc.gate_input = gate_input == "raw" ? fr::GateInput::kRawScore : fr::GateInput::kProbability;
      tc.verbose = !quiet;
      cli::run_train(tr, inv);
    } else if (e->parsed()) {
      inv.subcommand = "eval";
      inv.resolved_config = e->config_to_str(true, false);
      ev.baselines = !no_baselines;
      cli::run_eval(ev, inv);
    } else if (c->parsed()) {
      inv.subcommand = "compare";
      inv.resolved_config = c->config_to_str(true, false);
      cli::run_compare(cmp, inv);
    } else if (a->parsed()) {
      inv.subcommand = "analyze-entropy";
      inv.resolved_config = a->config_to_str(true, false);
      cli::run_analyze_entropy(ent, inv);
    }
  } catch (const fr::NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const fr::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
  return 0;
}
