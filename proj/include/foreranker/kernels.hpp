#pragma once

#include <span>
#include <vector>

#include "foreranker/encoder.hpp"

// Batch forward/backward over many serialized inputs. The OpenMP variants are
// what training and evaluation use; the serial variants are the plain
// reference they are tested against.
//
// Gradient accumulation in the parallel path goes through a fixed number of
// chunk buffers reduced in chunk order, so results do not depend on the
// thread count.

namespace foreranker {

using InputBatch = std::span<const std::vector<TokenId>>;

inline constexpr std::size_t kGradientChunks = 8;

template <typename T>
std::vector<T> score_batch_serial(const ModelParams<T>& params, InputBatch inputs);

template <typename T>
std::vector<T> score_batch_parallel(const ModelParams<T>& params, InputBatch inputs);

/// Forward pass keeping tapes for a later backward pass.
template <typename T>
std::vector<T> forward_batch(const ModelParams<T>& params, InputBatch inputs,
                             std::vector<ForwardTape<T>>& tapes);

/// grad += sum_i dscores[i] * d score_i / d params, in input order.
template <typename T>
void backward_batch_serial(const ModelParams<T>& params, std::span<const ForwardTape<T>> tapes,
                           std::span<const T> dscores, std::span<T> grad);

template <typename T>
void backward_batch_parallel(const ModelParams<T>& params, std::span<const ForwardTape<T>> tapes,
                             std::span<const T> dscores, std::span<T> grad);

}  // namespace foreranker
