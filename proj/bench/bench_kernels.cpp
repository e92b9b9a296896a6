// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "foreranker/kernels.hpp"
#include "foreranker/rng.hpp"

using namespace foreranker;

namespace {

struct Setup {
  ModelParams<float> params;
  std::vector<std::vector<TokenId>> inputs;
  std::vector<float> dscores;

  explicit Setup(std::size_t batch) : params(init_params<float>(arch(), 1)) {
    Rng rng(derive_seed(1, "bench"));
    for (std::size_t i = 0; i < batch; ++i) {
      std::vector<TokenId> ids{Vocabulary::kCls};
      const std::size_t len = 32 + rng() % 96;
      for (std::size_t t = 1; t < len; ++t) ids.push_back(static_cast<TokenId>(4 + rng() % 2000));
      inputs.push_back(std::move(ids));
      dscores.push_back(0.01f * static_cast<float>(static_cast<int>(i % 11) - 5));
    }
  }

  static ArchConfig arch() {
    ArchConfig a;
    a.vocab_size = 2004;
    return a;  // default width, depth and max length
  }
};

void BM_ScoreSerial(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(score_batch_serial(s.params, s.inputs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScoreParallel(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(score_batch_parallel(s.params, s.inputs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BackwardSerial(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  std::vector<ForwardTape<float>> tapes;
  forward_batch(s.params, s.inputs, tapes);
  std::vector<float> grad(s.params.size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0f);
    backward_batch_serial<float>(s.params, tapes, s.dscores, grad);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BackwardParallel(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  std::vector<ForwardTape<float>> tapes;
  forward_batch(s.params, s.inputs, tapes);
  std::vector<float> grad(s.params.size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0f);
    backward_batch_parallel<float>(s.params, tapes, s.dscores, grad);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ScoreSerial)->Arg(16)->Arg(80)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreParallel)->Arg(16)->Arg(80)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardSerial)->Arg(16)->Arg(80)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardParallel)->Arg(16)->Arg(80)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
