#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "foreranker/encoder.hpp"

namespace foreranker {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Decay applies only to tensors the
/// layout marks as decayed (weight matrices and embeddings).
template <typename T>
class AdamW {
 public:
  AdamW(const ParamLayout& layout, AdamWConfig config = {});

  void step(std::span<T> params, std::span<const T> grad, double lr);
  std::size_t steps() const { return steps_; }

 private:
  AdamWConfig config_;
  std::vector<T> m_, v_;
  std::vector<unsigned char> decay_;
  std::size_t steps_ = 0;
};

/// Linear decay from `base` to 0 over `total_steps`.
double linear_decay(double base, std::size_t step, std::size_t total_steps);

}  // namespace foreranker
