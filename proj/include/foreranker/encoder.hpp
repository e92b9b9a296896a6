#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "foreranker/corpus.hpp"
#include "foreranker/vocab.hpp"

namespace foreranker {

/// Shape of one ranking model: a pre-LN transformer encoder whose
/// [CLS]-position output feeds a one-hidden-layer tanh MLP with a scalar
/// output.
struct ArchConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t ff_width = 128;
  std::size_t layers = 2;
  std::size_t max_length = kDefaultMaxLength;
  std::size_t head_hidden = 64;

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  bool decay = true;  // subject to weight decay

  std::size_t size() const { return rows * cols; }
};

/// Offsets of every tensor inside one flat parameter buffer.
class ParamLayout {
 public:
  struct Layer {
    std::size_t ln1_gain, ln1_bias;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gain, ln2_bias;
    std::size_t w1, b1, w2, b2;
  };

  explicit ParamLayout(const ArchConfig& config);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total_size() const { return total_; }

  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<Layer> layer;
  std::size_t lnf_gain = 0, lnf_bias = 0;
  std::size_t head_w1 = 0, head_b1 = 0, head_w2 = 0, head_b2 = 0;

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool decay);

  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

/// All trainable weights of one encoder plus scoring head, stored in one
/// flat buffer laid out by ParamLayout. Gradients use the same type.
template <typename T>
class ModelParams {
 public:
  explicit ModelParams(const ArchConfig& config);

  const ArchConfig& config() const { return config_; }
  const ParamLayout& layout() const { return *layout_; }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::size_t size() const { return values_.size(); }

  void set_zero();
  bool all_finite() const;
  /// Zeroes the scoring head's output layer, so every score is 0.
  void zero_head_output();

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out(config_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.values()[i] = static_cast<U>(values_[i]);
    return out;
  }

  bool operator==(const ModelParams& other) const {
    return config_ == other.config_ && values_ == other.values_;
  }

 private:
  ArchConfig config_;
  std::shared_ptr<const ParamLayout> layout_;
  // Aligned storage keeps Eigen on one code path, so results never depend
  // on where the allocator happened to place the buffer.
  std::vector<T, Eigen::aligned_allocator<T>> values_;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct LayerTape {
  RowMat<T> x;  // input, L x d
  RowMat<T> xhat1;
  ColVec<T> rstd1;
  RowMat<T> h1;
  RowMat<T> q, k, v;
  std::vector<RowMat<T>> attn;  // per head, rows x L
  RowMat<T> o;
  RowMat<T> y;
  RowMat<T> xhat2;
  ColVec<T> rstd2;
  RowMat<T> h2;
  RowMat<T> u;
  RowMat<T> g;
};

/// Activations kept by a forward pass for the matching backward pass.
template <typename T>
struct ForwardTape {
  std::vector<TokenId> ids;
  std::vector<std::size_t> positions;
  std::vector<LayerTape<T>> layers;
  RowMat<T> out;  // final layer output; row 0 is the [CLS] position
  RowVec<T> xhatf;
  T rstdf{};
  RowVec<T> pooled;
  RowVec<T> hidden;
  T score{};
};

/// Scores one serialized input. Padding ids are masked out entirely.
/// Throws InputError when the input exceeds the configured maximum length or
/// holds an id outside the vocabulary.
template <typename T>
T encode_score(const ModelParams<T>& params, std::span<const TokenId> ids);

template <typename T>
T encode_score(const ModelParams<T>& params, const SerializedInput& input) {
  return encode_score(params, std::span<const TokenId>(input.token_ids));
}

template <typename T>
T forward(const ModelParams<T>& params, std::span<const TokenId> ids, ForwardTape<T>& tape);

/// Adds d(score)/d(params) * dscore into `grad` (same layout as params).
template <typename T>
void backward(const ModelParams<T>& params, const ForwardTape<T>& tape, T dscore, std::span<T> grad);

/// Uniform in +-1/sqrt(fan_in) for weight matrices, zero biases, unit
/// LayerNorm gains. Deterministic in the seed.
template <typename T>
ModelParams<T> init_params(const ArchConfig& config, std::uint64_t seed);

/// Two element-wise identical parameter sets for the history and future twins.
template <typename T>
std::pair<ModelParams<T>, ModelParams<T>> init_siamese(const ArchConfig& config, std::uint64_t seed) {
  auto history = init_params<T>(config, seed);
  auto future = history;
  return {std::move(history), std::move(future)};
}

/// Behavior context of one ranking instance.
struct RankingContext {
  const BehaviorWindow* history = nullptr;
  std::span<const std::string> query;
  /// Present for the future-aware twin.
  const BehaviorWindow* future = nullptr;
};

/// One serialization per candidate: history-only when ctx.future is null,
/// history-plus-future otherwise.
std::vector<std::vector<TokenId>> serialize_candidates(const RankingContext& ctx,
                                                       std::span<const Document> candidates,
                                                       const Vocabulary& vocab,
                                                       std::size_t max_length);

template <typename T>
std::vector<double> score_candidates(const ModelParams<T>& params, const RankingContext& ctx,
                                     std::span<const Document> candidates, const Vocabulary& vocab);

}  // namespace foreranker
