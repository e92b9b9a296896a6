#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foreranker/eval.hpp"
#include "foreranker/generator.hpp"
#include "foreranker/trainer.hpp"

namespace foreranker::cli {

/// What every manifest records about the run.
struct Invocation {
  std::string subcommand;
  std::vector<std::string> args;  // argv without the program path
  std::string resolved_config;    // every option after file and flag merging
};

struct GenDataOptions {
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string out;
  std::size_t test_sessions = 0;
  std::string test_out;
  GeneratorConfig generator;
};

struct TrainOptions {
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string train;
  std::string precision = "float";
  TrainConfig config;
};

struct EvalCommandOptions {
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string checkpoint;
  std::string test;
  std::string vocab;  // defaults to vocab.txt next to the checkpoint
  std::string precision = "float";
  bool baselines = true;
  EvalOptions eval;
};

struct CompareOptions {
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string a, b;
  std::string label_a = "a", label_b = "b";
};

struct EntropyOptions {
  std::uint64_t seed = 42;
  std::string out_dir;
  std::vector<std::string> checkpoints;
  std::vector<std::string> labels;
  std::string test;
  std::string vocab;
  std::string precision = "float";
  std::size_t bins = 10;
  bool with_future = false;
  std::size_t future_k = kDefaultFutureTurns;
};

void run_gen_data(const GenDataOptions& opt, const Invocation& inv);
void run_train(const TrainOptions& opt, const Invocation& inv);
void run_eval(const EvalCommandOptions& opt, const Invocation& inv);
void run_compare(const CompareOptions& opt, const Invocation& inv);
void run_analyze_entropy(const EntropyOptions& opt, const Invocation& inv);

}  // namespace foreranker::cli
