#include <doctest.h>

#include <cmath>

#include "foreranker/errors.hpp"
#include "foreranker/optimizer.hpp"
#include "helpers.hpp"

using namespace foreranker;
using testing_support::tiny_arch;

TEST_CASE("linear decay") {
  CHECK(linear_decay(0.1, 0, 10) == 0.1);
  CHECK(linear_decay(0.1, 5, 10) == doctest::Approx(0.05));
  CHECK(linear_decay(0.1, 10, 10) == 0.0);
  CHECK(linear_decay(0.1, 99, 10) == 0.0);
  CHECK(linear_decay(0.1, 3, 0) == 0.1);
}

TEST_CASE("adamw follows the textbook update") {
  auto arch = tiny_arch();
  auto params = init_params<double>(arch, 1);
  const auto& layout = params.layout();
  AdamWConfig cfg;
  cfg.weight_decay = 0.05;
  AdamW<double> opt(layout, cfg);

  // Reference state, element by element.
  std::vector<double> p(params.values().begin(), params.values().end());
  std::vector<double> m(p.size(), 0.0), v(p.size(), 0.0);
  std::vector<bool> decayed(p.size(), false);
  for (const auto& t : layout.tensors()) {
    for (std::size_t i = 0; i < t.size(); ++i) decayed[t.offset + i] = t.decay;
  }

  Rng rng(3);
  std::normal_distribution<double> gauss;
  for (int step = 1; step <= 4; ++step) {
    std::vector<double> g(p.size());
    for (auto& x : g) x = gauss(rng);
    const double lr = 0.01 / step;
    opt.step(params.values(), g, lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(0.9, step));
      const double vhat = v[i] / (1 - std::pow(0.999, step));
      p[i] -= lr * (mhat / (std::sqrt(vhat) + 1e-8) + (decayed[i] ? 0.05 * p[i] : 0.0));
    }
  }
  CHECK(opt.steps() == 4);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::fabs(p[i] - params.values()[i]));
  CHECK(worst < 1e-14);
}

TEST_CASE("biases and layer-norm parameters are not decayed") {
  auto arch = tiny_arch();
  ModelParams<double> params(arch);
  for (auto& x : params.values()) x = 1.0;
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  AdamW<double> opt(params.layout(), cfg);
  std::vector<double> zero(params.size(), 0.0);
  opt.step(params.values(), zero, 0.1);
  for (const auto& t : params.layout().tensors()) {
    const double expected = t.decay ? 1.0 - 0.1 * 0.5 : 1.0;
    CHECK(params.values()[t.offset] == doctest::Approx(expected).epsilon(1e-15));
    const bool is_norm_or_bias = t.name.find("ln") != std::string::npos || t.rows == 1;
    if (is_norm_or_bias) CHECK_MESSAGE(!t.decay, t.name);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto params = init_params<double>(tiny_arch(), 2);
  const auto before = params;
  AdamW<double> opt(params.layout());
  std::vector<double> g(params.size(), 0.3);
  opt.step(params.values(), g, 0.0);
  CHECK(params == before);
}

TEST_CASE("size mismatch is rejected") {
  auto params = init_params<double>(tiny_arch(), 2);
  AdamW<double> opt(params.layout());
  std::vector<double> g(params.size() - 1, 0.0);
  CHECK_THROWS_AS(opt.step(params.values(), g, 0.1), InputError);
}
