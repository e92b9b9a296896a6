#include "foreranker/kernels.hpp"

#include <algorithm>

#include "foreranker/errors.hpp"

namespace foreranker {

template <typename T>
std::vector<T> score_batch_serial(const ModelParams<T>& params, InputBatch inputs) {
  std::vector<T> scores(inputs.size());
  ForwardTape<T> tape;
  for (std::size_t i = 0; i < inputs.size(); ++i) scores[i] = forward(params, inputs[i], tape);
  return scores;
}

template <typename T>
std::vector<T> score_batch_parallel(const ModelParams<T>& params, InputBatch inputs) {
  std::vector<T> scores(inputs.size());
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
  std::exception_ptr error;
#pragma omp parallel
  {
    ForwardTape<T> tape;
#pragma omp for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        scores[i] = forward(params, inputs[i], tape);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);
  return scores;
}

template <typename T>
std::vector<T> forward_batch(const ModelParams<T>& params, InputBatch inputs,
                             std::vector<ForwardTape<T>>& tapes) {
  tapes.resize(inputs.size());
  std::vector<T> scores(inputs.size());
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      scores[i] = forward(params, inputs[i], tapes[i]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return scores;
}

template <typename T>
void backward_batch_serial(const ModelParams<T>& params, std::span<const ForwardTape<T>> tapes,
                           std::span<const T> dscores, std::span<T> grad) {
  if (tapes.size() != dscores.size()) throw InputError("backward: tape and gradient counts differ");
  for (std::size_t i = 0; i < tapes.size(); ++i) {
    if (dscores[i] != T(0)) backward(params, tapes[i], dscores[i], grad);
  }
}

template <typename T>
void backward_batch_parallel(const ModelParams<T>& params, std::span<const ForwardTape<T>> tapes,
                             std::span<const T> dscores, std::span<T> grad) {
  if (tapes.size() != dscores.size()) throw InputError("backward: tape and gradient counts differ");
  const std::size_t n = tapes.size();
  const std::size_t chunks = std::min(kGradientChunks, std::max<std::size_t>(n, 1));
  std::vector<std::vector<T>> partial(chunks, std::vector<T>(grad.size(), T(0)));
  const auto n_chunks = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(static, 1)
  for (std::ptrdiff_t c = 0; c < n_chunks; ++c) {
    const std::size_t begin = n * static_cast<std::size_t>(c) / chunks;
    const std::size_t end = n * static_cast<std::size_t>(c + 1) / chunks;
    auto& buf = partial[static_cast<std::size_t>(c)];
    for (std::size_t i = begin; i < end; ++i) {
      if (dscores[i] != T(0)) backward(params, tapes[i], dscores[i], std::span<T>(buf));
    }
  }
  for (const auto& buf : partial) {
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += buf[j];
  }
}

#define FORERANKER_INSTANTIATE(T)                                                                   \
  template std::vector<T> score_batch_serial<T>(const ModelParams<T>&, InputBatch);                 \
  template std::vector<T> score_batch_parallel<T>(const ModelParams<T>&, InputBatch);               \
  template std::vector<T> forward_batch<T>(const ModelParams<T>&, InputBatch,                       \
                                           std::vector<ForwardTape<T>>&);                           \
  template void backward_batch_serial<T>(const ModelParams<T>&, std::span<const ForwardTape<T>>,    \
                                         std::span<const T>, std::span<T>);                         \
  template void backward_batch_parallel<T>(const ModelParams<T>&, std::span<const ForwardTape<T>>,  \
                                           std::span<const T>, std::span<T>);

FORERANKER_INSTANTIATE(float)
FORERANKER_INSTANTIATE(double)

#undef FORERANKER_INSTANTIATE

}  // namespace foreranker
