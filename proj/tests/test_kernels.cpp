#include <doctest.h>

#include <cmath>

#include <omp.h>

#include "foreranker/errors.hpp"
#include "foreranker/kernels.hpp"
#include "helpers.hpp"

using namespace foreranker;
using testing_support::random_input;
using testing_support::tiny_arch;

namespace {

std::vector<std::vector<TokenId>> random_batch(Rng& rng, std::size_t vocab, std::size_t n) {
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_input(rng, vocab, 3 + rng() % 15));
  return out;
}

struct ThreadCount {
  explicit ThreadCount(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~ThreadCount() { omp_set_num_threads(saved_); }
  int saved_;
};

template <typename T>
std::vector<T> parallel_grad(const ModelParams<T>& params, const std::vector<std::vector<TokenId>>& batch,
                             const std::vector<T>& dscores) {
  std::vector<ForwardTape<T>> tapes;
  forward_batch(params, batch, tapes);
  std::vector<T> grad(params.size(), T(0));
  backward_batch_parallel<T>(params, tapes, dscores, grad);
  return grad;
}

}  // namespace

TEST_CASE_TEMPLATE("parallel scoring equals the serial reference exactly", T, float, double) {
  Rng rng(1);
  auto arch = tiny_arch(40);
  auto params = init_params<T>(arch, 3);
  auto batch = random_batch(rng, arch.vocab_size, 37);
  const auto serial = score_batch_serial(params, batch);
  for (int threads : {1, 2, 3, 8}) {
    ThreadCount tc(threads);
    CHECK(score_batch_parallel(params, batch) == serial);
    std::vector<ForwardTape<T>> tapes;
    CHECK(forward_batch(params, batch, tapes) == serial);
  }
}

TEST_CASE_TEMPLATE("parallel gradients do not depend on the thread count", T, float, double) {
  Rng rng(2);
  auto arch = tiny_arch(40);
  auto params = init_params<T>(arch, 4);
  auto batch = random_batch(rng, arch.vocab_size, 29);
  std::vector<T> dscores;
  for (std::size_t i = 0; i < batch.size(); ++i) dscores.push_back(T(0.1) * T(static_cast<int>(i % 7) - 3));

  std::vector<T> reference;
  {
    ThreadCount tc(1);
    reference = parallel_grad(params, batch, dscores);
  }
  for (int threads : {2, 3, 5, 8}) {
    ThreadCount tc(threads);
    CHECK(parallel_grad(params, batch, dscores) == reference);
  }
}

TEST_CASE("parallel gradients match the serial reference") {
  Rng rng(3);
  auto arch = tiny_arch(40);
  auto params = init_params<double>(arch, 5);
  auto batch = random_batch(rng, arch.vocab_size, 23);
  std::vector<double> dscores(batch.size());
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& d : dscores) d = u(rng);

  std::vector<ForwardTape<double>> tapes;
  forward_batch(params, batch, tapes);
  std::vector<double> serial(params.size(), 0.0);
  backward_batch_serial<double>(params, tapes, dscores, serial);
  const auto parallel = parallel_grad(params, batch, dscores);
  double worst = 0.0;
  for (std::size_t j = 0; j < serial.size(); ++j) {
    worst = std::max(worst, std::fabs(serial[j] - parallel[j]) / std::max(1.0, std::fabs(serial[j])));
  }
  CHECK(worst < 1e-12);

  // One input means one chunk, which sums in the serial order.
  std::vector<std::vector<TokenId>> single{batch[0]};
  std::vector<ForwardTape<double>> one_tape;
  forward_batch(params, single, one_tape);
  std::vector<double> s1(params.size(), 0.0);
  backward_batch_serial<double>(params, one_tape, std::vector<double>{0.5}, s1);
  CHECK(parallel_grad(params, single, std::vector<double>{0.5}) == s1);
}

TEST_CASE("errors inside the parallel region reach the caller") {
  auto arch = tiny_arch(10);
  auto params = init_params<double>(arch, 1);
  std::vector<std::vector<TokenId>> batch{{Vocabulary::kCls, 5}, {Vocabulary::kCls, 99}};
  CHECK_THROWS_AS(score_batch_parallel(params, batch), InputError);
  std::vector<ForwardTape<double>> tapes;
  CHECK_THROWS_AS(forward_batch(params, batch, tapes), InputError);

  std::vector<std::vector<TokenId>> ok{{Vocabulary::kCls, 5}};
  forward_batch(params, ok, tapes);
  std::vector<double> grad(params.size(), 0.0);
  CHECK_THROWS_AS(backward_batch_parallel<double>(params, tapes, std::vector<double>{1.0, 2.0}, grad),
                  InputError);
}
