#include "foreranker/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "foreranker/errors.hpp"

namespace foreranker {

template <typename T>
AdamW<T>::AdamW(const ParamLayout& layout, AdamWConfig config)
    : config_(config),
      m_(layout.total_size(), T(0)),
      v_(layout.total_size(), T(0)),
      decay_(layout.total_size(), 0) {
  for (const auto& t : layout.tensors()) {
    if (t.decay) std::fill_n(decay_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 1);
  }
}

template <typename T>
void AdamW<T>::step(std::span<T> params, std::span<const T> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw InputError("optimizer: parameter size mismatch");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
  const T rate = static_cast<T>(lr);
  const T wd = static_cast<T>(config_.weight_decay);
  const T eps = static_cast<T>(config_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grad[i];
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
    const T update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    const T decay = decay_[i] ? wd * params[i] : T(0);
    params[i] -= rate * (update + decay);
  }
}

double linear_decay(double base, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base;
  const double frac = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return base * (1.0 - frac);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace foreranker
