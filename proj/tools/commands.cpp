#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>

#include <json.hpp>

#include "foreranker/checkpoint.hpp"
#include "foreranker/corpus.hpp"
#include "foreranker/errors.hpp"
#include "foreranker/rng.hpp"
#include "foreranker/vocab.hpp"

namespace foreranker::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

fs::path resolve(const std::string& out_dir, const std::string& p) {
  fs::path path(p);
  if (!out_dir.empty() && path.is_relative()) return fs::path(out_dir) / path;
  return path;
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw IoError(what + " not found: " + path.string());
}

std::string digest(const fs::path& path) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(read_text(path))));
  return buf;
}

Json formats() {
  Json f;
  f["corpus"] = "jsonl/1";
  f["checkpoint"] = kCheckpointVersion;
  f["vocabulary"] = "lines/1";
  f["metrics"] = "csv+json/1";
  f["samples"] = "csv/1";
  return f;
}

// Inputs are listed with content digests so a manifest pins exactly what was read.
void write_manifest(const fs::path& path, const Invocation& inv, std::uint64_t seed,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                    Json extra = Json::object()) {
  Json m;
  m["tool"] = "foreranker";
  m["tool_version"] = kToolVersion;
  m["subcommand"] = inv.subcommand;
  m["invocation"] = inv.args;
  m["seed"] = seed;
  m["formats"] = formats();
  m["resolved_config"] = inv.resolved_config;
  Json in = Json::array();
  for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"fnv1a64", digest(p)}});
  m["inputs"] = in;
  Json out = Json::array();
  for (const auto& p : outputs) out.push_back(p.filename().string());
  m["outputs"] = out;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_file_atomic(path, m.dump(2) + "\n");
}

template <typename F>
void with_precision(const std::string& precision, F&& f) {
  if (precision == "float") {
    f(float{});
  } else if (precision == "double") {
    f(double{});
  } else {
    throw InputError("unknown precision: " + precision);
  }
}

fs::path default_vocab(const std::string& vocab, const fs::path& checkpoint) {
  if (!vocab.empty()) return vocab;
  return checkpoint.parent_path() / "vocab.txt";
}

template <typename T>
ModelParams<T> load_model(const fs::path& ckpt, const Vocabulary& vocab) {
  require_file(ckpt, "checkpoint");
  const auto header = read_checkpoint_header(ckpt);
  if (header.vocab_hash != vocab.hash() || header.arch.vocab_size != vocab.size()) {
    throw InputError("architecture mismatch: checkpoint " + ckpt.string() + " was trained with a " +
                     std::to_string(header.arch.vocab_size) + "-entry vocabulary that differs from the " +
                     std::to_string(vocab.size()) + "-entry vocabulary supplied");
  }
  return load_checkpoint<T>(ckpt, header.arch);
}

}  // namespace

void run_gen_data(const GenDataOptions& opt, const Invocation& inv) {
  auto gen = opt.generator;
  gen.validate();
  const fs::path out = resolve(opt.out_dir, opt.out);
  ensure_dir(out.parent_path());

  std::cerr << "[gen-data] building world (seed " << opt.seed << ")\n";
  const World world = build_world(gen, opt.seed);
  std::cerr << "[gen-data] generating " << gen.sessions << " train sessions\n";
  const auto train = generate_split(world, gen, opt.seed, "train", gen.sessions);
  write_corpus(train.sessions, out);
  std::vector<fs::path> outputs{out};

  if (opt.test_sessions > 0) {
    if (opt.test_out.empty()) throw InputError("--test-sessions needs --test-out");
    const fs::path test_out = resolve(opt.out_dir, opt.test_out);
    ensure_dir(test_out.parent_path());
    std::cerr << "[gen-data] generating " << opt.test_sessions << " test sessions\n";
    const auto test = generate_split(world, gen, opt.seed, "test", opt.test_sessions);
    write_corpus(test.sessions, test_out);
    outputs.push_back(test_out);
  }

  Json g;
  g["sessions"] = gen.sessions;
  g["test_sessions"] = opt.test_sessions;
  g["intents"] = gen.intents;
  g["cluster_size"] = gen.cluster_size;
  g["intent_words"] = gen.intent_words;
  g["cluster_words"] = gen.cluster_words;
  g["background_words"] = gen.background_words;
  g["docs_per_intent"] = gen.docs_per_intent;
  g["mean_queries"] = gen.mean_queries;
  g["min_queries"] = gen.min_queries;
  g["max_queries"] = gen.max_queries;
  g["candidates"] = gen.candidates;
  g["drift"] = gen.drift;
  g["specificity_base"] = gen.specificity_base;
  g["specificity_growth"] = gen.specificity_growth;
  g["query_cluster_prob"] = gen.query_cluster_prob;
  g["doc_intent_prob"] = gen.doc_intent_prob;
  g["doc_cluster_prob"] = gen.doc_cluster_prob;
  g["doc_min_length"] = gen.doc_min_length;
  g["doc_max_length"] = gen.doc_max_length;
  g["bm25_distractor_fraction"] = gen.bm25_distractor_fraction;
  g["no_click_prob"] = gen.no_click_prob;
  g["click_noise"] = gen.click_noise;
  fs::path manifest = out;
  manifest += ".manifest.json";
  write_manifest(manifest, inv, opt.seed, {}, outputs, Json{{"gen_config", g}});
  std::cerr << "[gen-data] wrote " << out.string() << "\n";
}

void run_train(const TrainOptions& opt, const Invocation& inv) {
  const fs::path corpus_path = opt.train;
  require_file(corpus_path, "training corpus");
  const fs::path dir = opt.out_dir;
  ensure_dir(dir);

  const auto sessions = load_corpus(corpus_path);
  const auto vocab = Vocabulary::from_sessions(sessions);
  TrainConfig config = opt.config;
  config.seed = opt.seed;
  std::cerr << "[train] " << sessions.size() << " sessions, vocabulary " << vocab.size() << ", mode "
            << to_string(config.mode) << "\n";

  const fs::path vocab_path = dir / "vocab.txt";
  const fs::path hist_path = dir / "foreranker.ckpt";
  const fs::path fut_path = dir / "future.ckpt";
  const fs::path log_path = dir / "train_log.jsonl";
  const fs::path report_path = dir / "train_report.json";
  std::vector<fs::path> outputs{vocab_path, hist_path};

  with_precision(opt.precision, [&](auto tag) {
    using T = decltype(tag);
    const auto result = train<T>(config, sessions, vocab);
    vocab.save(vocab_path);
    save_checkpoint(result.history, vocab.hash(), hist_path);
    if (result.future) {
      save_checkpoint(*result.future, vocab.hash(), fut_path);
      outputs.push_back(fut_path);
    } else if (fs::exists(fut_path)) {
      // A stale future twin from an earlier run would misdescribe this one.
      fs::remove(fut_path);
      std::cerr << "[train] removed stale " << fut_path.string() << "\n";
    }
    write_file_atomic(log_path, result.report.to_jsonl());

    const auto& r = result.report;
    Json j;
    j["mode"] = to_string(r.mode);
    j["precision"] = opt.precision;
    j["steps"] = r.steps.size();
    j["instances"] = r.instances;
    j["skipped_instances"] = r.skipped_instances;
    j["warmup_steps"] = r.warmup_steps;
    j["mean_alpha"] = r.mean_alpha ? Json(*r.mean_alpha) : Json(nullptr);
    const auto& a = result.history.config();
    j["arch"] = {{"vocab_size", a.vocab_size}, {"d_model", a.d_model},   {"heads", a.heads},
                 {"ff_width", a.ff_width},     {"layers", a.layers},     {"max_length", a.max_length},
                 {"head_hidden", a.head_hidden}};
    if (!r.steps.empty()) {
      const auto& last = r.steps.back();
      j["final_loss_h"] = last.loss_h ? Json(*last.loss_h) : Json(nullptr);
      j["final_loss_f"] = last.loss_f ? Json(*last.loss_f) : Json(nullptr);
    }
    write_file_atomic(report_path, j.dump(2) + "\n");
  });
  outputs.push_back(log_path);
  outputs.push_back(report_path);
  write_manifest(dir / "manifest.json", inv, opt.seed, {corpus_path}, outputs);
  std::cerr << "[train] wrote " << hist_path.string() << "\n";
}

void run_eval(const EvalCommandOptions& opt, const Invocation& inv) {
  const fs::path ckpt = opt.checkpoint;
  const fs::path test_path = opt.test;
  const fs::path vocab_path = default_vocab(opt.vocab, ckpt);
  require_file(ckpt, "checkpoint");
  require_file(test_path, "evaluation corpus");
  require_file(vocab_path, "vocabulary");
  const fs::path dir = opt.out_dir;
  ensure_dir(dir);

  const auto vocab = Vocabulary::load(vocab_path);
  const auto sessions = load_corpus(test_path);
  const auto& ks = opt.eval.ndcg_ks;

  std::vector<QueryEvaluation> model;
  with_precision(opt.precision, [&](auto tag) {
    using T = decltype(tag);
    const auto params = load_model<T>(ckpt, vocab);
    std::cerr << "[eval] scoring " << sessions.size() << " sessions"
              << (opt.eval.with_future ? " with future context" : "") << "\n";
    model = evaluate_model(params, sessions, vocab, opt.eval);
  });

  std::vector<std::pair<std::string, std::vector<QueryEvaluation>>> baselines;
  if (opt.baselines) {
    baselines.emplace_back("random", evaluate_random(sessions, opt.seed, ks));
    baselines.emplace_back("bm25", evaluate_bm25(sessions, ks));
  }
  const auto report = build_report(sessions, model, baselines, opt.eval);

  std::vector<fs::path> outputs = {dir / "metrics.csv", dir / "metrics.json", dir / "samples.csv",
                                   dir / "entropy.csv"};
  write_file_atomic(outputs[0], report.to_csv());
  write_file_atomic(outputs[1], report.to_json());
  write_file_atomic(outputs[2], samples_csv(model, ks));
  write_file_atomic(outputs[3], report.entropy.to_csv());
  for (const auto& [name, evals] : baselines) {
    outputs.push_back(dir / ("samples_" + name + ".csv"));
    write_file_atomic(outputs.back(), samples_csv(evals, ks));
  }
  Json extra;
  extra["with_future"] = opt.eval.with_future;
  if (opt.eval.with_future) {
    extra["note"] = "future-aware scoring reads later turns of each session; this context does not exist at inference time";
  }
  write_manifest(dir / "manifest.json", inv, opt.seed, {ckpt, vocab_path, test_path}, outputs, extra);
  if (report.overall) {
    std::cerr << "[eval] MAP " << report.overall->map << " MRR " << report.overall->mrr << " over "
              << report.overall->count << " queries\n";
  } else {
    std::cerr << "[eval] no query with a relevant document\n";
  }
}

void run_compare(const CompareOptions& opt, const Invocation& inv) {
  const fs::path a = opt.a, b = opt.b;
  require_file(a, "sample file");
  require_file(b, "sample file");
  const fs::path dir = opt.out_dir;
  ensure_dir(dir);
  const auto sa = parse_samples_csv(read_text(a));
  const auto sb = parse_samples_csv(read_text(b));
  const auto results = compare_samples(sa, sb, opt.label_a + "_vs_" + opt.label_b);
  const fs::path out = dir / "significance.json";
  write_file_atomic(out, significance_json(results));
  write_manifest(dir / "manifest.json", inv, opt.seed, {a, b}, {out});
  for (const auto& r : results) {
    std::cerr << "[compare] " << r.metric << " mean diff " << r.test.mean_difference << " p " << r.test.p
              << " corrected " << r.p_corrected << (r.test.degenerate ? " (degenerate)" : "") << "\n";
  }
}

void run_analyze_entropy(const EntropyOptions& opt, const Invocation& inv) {
  if (opt.checkpoints.empty() || opt.checkpoints.size() > 2) {
    throw InputError("analyze-entropy takes one or two checkpoints");
  }
  std::vector<std::string> labels = opt.labels;
  if (labels.empty()) {
    labels = opt.checkpoints.size() == 1 ? std::vector<std::string>{"model"} : std::vector<std::string>{"a", "b"};
  }
  if (labels.size() != opt.checkpoints.size()) throw InputError("need one --label per checkpoint");
  if (labels.size() == 2 && labels[0] == labels[1]) throw InputError("labels must differ");

  const fs::path test_path = opt.test;
  require_file(test_path, "evaluation corpus");
  const fs::path dir = opt.out_dir;
  ensure_dir(dir);
  const auto sessions = load_corpus(test_path);

  EvalOptions eval;
  eval.entropy_bins = opt.bins;
  eval.with_future = opt.with_future;
  eval.future_k = opt.future_k;

  std::vector<Histogram> hists;
  std::vector<fs::path> inputs{test_path}, outputs;
  Json summary = Json::object();
  for (std::size_t m = 0; m < opt.checkpoints.size(); ++m) {
    const fs::path ckpt = opt.checkpoints[m];
    const fs::path vocab_path = default_vocab(opt.vocab, ckpt);
    require_file(ckpt, "checkpoint");
    require_file(vocab_path, "vocabulary");
    const auto vocab = Vocabulary::load(vocab_path);
    std::vector<QueryEvaluation> evals;
    with_precision(opt.precision, [&](auto tag) {
      using T = decltype(tag);
      evals = evaluate_model(load_model<T>(ckpt, vocab), sessions, vocab, eval);
    });
    std::vector<double> values;
    for (const auto& q : evals) {
      if (q.normalized_entropy) values.push_back(*q.normalized_entropy);
    }
    hists.push_back(entropy_histogram(values, opt.bins));
    double mean = 0.0;
    for (double v : values) mean += v;
    Json s;
    s["queries"] = values.size();
    s["mean_normalized_entropy"] = values.empty() ? Json(nullptr) : Json(mean / static_cast<double>(values.size()));
    summary[labels[m]] = s;
    outputs.push_back(dir / ("entropy_" + labels[m] + ".csv"));
    write_file_atomic(outputs.back(), hists.back().to_csv());
    inputs.push_back(ckpt);
    inputs.push_back(vocab_path);
    std::cerr << "[analyze-entropy] " << labels[m] << ": mean normalized entropy "
              << s["mean_normalized_entropy"].dump() << " over " << values.size() << " queries\n";
  }
  if (hists.size() == 2) {
    std::string csv = "bin_low,bin_high," + labels[0] + "," + labels[1] + "\n";
    for (std::size_t i = 0; i < opt.bins; ++i) {
      csv += format_number(hists[0].bin_low(i)) + "," + format_number(hists[0].bin_high(i)) + "," +
             std::to_string(hists[0].counts[i]) + "," + std::to_string(hists[1].counts[i]) + "\n";
    }
    outputs.push_back(dir / "entropy_side_by_side.csv");
    write_file_atomic(outputs.back(), csv);
  }
  outputs.push_back(dir / "entropy_summary.json");
  write_file_atomic(outputs.back(), summary.dump(2) + "\n");
  write_manifest(dir / "manifest.json", inv, opt.seed, inputs, outputs);
}

}  // namespace foreranker::cli
