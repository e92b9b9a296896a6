#include "foreranker/encoder.hpp"

#include <cmath>
#include <random>

#include "foreranker/errors.hpp"
#include "foreranker/rng.hpp"

namespace foreranker {

void ArchConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kNumReserved)) {
    throw InputError("architecture: vocabulary must hold more than the reserved ids");
  }
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw InputError("architecture: d_model must be a positive multiple of heads");
  }
  if (ff_width == 0 || head_hidden == 0) throw InputError("architecture: widths must be positive");
  if (max_length < 5) throw InputError("architecture: max_length must be at least 5");
}

ParamLayout::ParamLayout(const ArchConfig& c) {
  c.validate();
  const std::size_t d = c.d_model;
  tok_emb = add("tok_emb", c.vocab_size, d, true);
  pos_emb = add("pos_emb", c.max_length, d, true);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer ly{};
    ly.ln1_gain = add(p + "ln1.gain", 1, d, false);
    ly.ln1_bias = add(p + "ln1.bias", 1, d, false);
    ly.wq = add(p + "attn.wq", d, d, true);
    ly.bq = add(p + "attn.bq", 1, d, false);
    ly.wk = add(p + "attn.wk", d, d, true);
    ly.bk = add(p + "attn.bk", 1, d, false);
    ly.wv = add(p + "attn.wv", d, d, true);
    ly.bv = add(p + "attn.bv", 1, d, false);
    ly.wo = add(p + "attn.wo", d, d, true);
    ly.bo = add(p + "attn.bo", 1, d, false);
    ly.ln2_gain = add(p + "ln2.gain", 1, d, false);
    ly.ln2_bias = add(p + "ln2.bias", 1, d, false);
    ly.w1 = add(p + "ff.w1", d, c.ff_width, true);
    ly.b1 = add(p + "ff.b1", 1, c.ff_width, false);
    ly.w2 = add(p + "ff.w2", c.ff_width, d, true);
    ly.b2 = add(p + "ff.b2", 1, d, false);
    layer.push_back(ly);
  }
  lnf_gain = add("final_ln.gain", 1, d, false);
  lnf_bias = add("final_ln.bias", 1, d, false);
  head_w1 = add("head.w1", d, c.head_hidden, true);
  head_b1 = add("head.b1", 1, c.head_hidden, false);
  head_w2 = add("head.w2", c.head_hidden, 1, true);
  head_b2 = add("head.b2", 1, 1, false);
}

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols, bool decay) {
  const std::size_t offset = total_;
  tensors_.push_back({std::move(name), rows, cols, offset, decay});
  total_ += rows * cols;
  return offset;
}

template <typename T>
ModelParams<T>::ModelParams(const ArchConfig& config)
    : config_(config),
      layout_(std::make_shared<const ParamLayout>(config)),
      values_(layout_->total_size(), T(0)) {}

template <typename T>
void ModelParams<T>::set_zero() {
  std::fill(values_.begin(), values_.end(), T(0));
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  for (T v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void ModelParams<T>::zero_head_output() {
  const auto& L = *layout_;
  std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(L.head_w2), config_.head_hidden, T(0));
  values_[L.head_b2] = T(0);
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
Eigen::Map<const RowMat<T>> cmat(const T* base, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {base + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename T>
Eigen::Map<RowMat<T>> mmat(T* base, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {base + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename T>
Eigen::Map<const RowVec<T>> cvec(const T* base, std::size_t offset, std::size_t n) {
  return {base + offset, static_cast<Eigen::Index>(n)};
}

template <typename T>
Eigen::Map<RowVec<T>> mvec(T* base, std::size_t offset, std::size_t n) {
  return {base + offset, static_cast<Eigen::Index>(n)};
}

template <typename T>
void layer_norm(const RowMat<T>& x, const Eigen::Map<const RowVec<T>>& gain,
                const Eigen::Map<const RowVec<T>>& bias, RowMat<T>& xhat, ColVec<T>& rstd,
                RowMat<T>& out) {
  const auto n = x.rows();
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const auto centered = (x.row(i).array() - mu).eval();
    const T var = centered.square().mean();
    const T r = T(1) / std::sqrt(var + T(kLayerNormEps));
    rstd(i) = r;
    xhat.row(i) = centered * r;
  }
  out = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
}

// dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)), per row.
template <typename T>
void layer_norm_backward(const RowMat<T>& dy, const RowMat<T>& xhat, const ColVec<T>& rstd,
                         const Eigen::Map<const RowVec<T>>& gain, Eigen::Map<RowVec<T>> dgain,
                         Eigen::Map<RowVec<T>> dbias, RowMat<T>& dx) {
  dgain += RowVec<T>((dy.array() * xhat.array()).colwise().sum().matrix());
  dbias += RowVec<T>(dy.colwise().sum());
  const RowMat<T> dxhat = dy.array().rowwise() * gain.array();
  dx.resize(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu(T u) {
  return T(0.5) * u * (T(1) + std::tanh(T(kGeluC) * (u + T(kGeluA) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  const T t = std::tanh(T(kGeluC) * (u + T(kGeluA) * u * u * u));
  return T(0.5) * (T(1) + t) +
         T(0.5) * u * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * kGeluA) * u * u);
}

template <typename T>
void collect_tokens(const ModelParams<T>& params, std::span<const TokenId> ids, ForwardTape<T>& tape) {
  const auto& c = params.config();
  if (ids.size() > c.max_length) {
    throw InputError("input of " + std::to_string(ids.size()) + " tokens exceeds the maximum " +
                     std::to_string(c.max_length));
  }
  tape.ids.clear();
  tape.positions.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " outside the vocabulary");
    }
    if (id == Vocabulary::kPad) continue;
    tape.ids.push_back(id);
    tape.positions.push_back(i);
  }
  if (tape.ids.empty()) throw InputError("input holds no non-padding tokens");
}

}  // namespace

template <typename T>
T forward(const ModelParams<T>& params, std::span<const TokenId> ids, ForwardTape<T>& tape) {
  collect_tokens(params, ids, tape);
  const auto& c = params.config();
  const auto& L = params.layout();
  const T* P = params.data();
  const std::size_t n = tape.ids.size();
  const std::size_t d = c.d_model;
  const std::size_t dh = d / c.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  RowMat<T> x(n, d);
  const auto tok = cmat(P, L.tok_emb, c.vocab_size, d);
  const auto pos = cmat(P, L.pos_emb, c.max_length, d);
  for (std::size_t i = 0; i < n; ++i) x.row(i) = tok.row(tape.ids[i]) + pos.row(tape.positions[i]);

  tape.layers.resize(c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto& ly = L.layer[l];
    auto& t = tape.layers[l];
    // Only the [CLS] row of the last layer reaches the head.
    const Eigen::Index r = (l + 1 == c.layers) ? 1 : static_cast<Eigen::Index>(n);
    t.x = std::move(x);
    layer_norm(t.x, cvec(P, ly.ln1_gain, d), cvec(P, ly.ln1_bias, d), t.xhat1, t.rstd1, t.h1);
    t.q = (t.h1.topRows(r) * cmat(P, ly.wq, d, d)).rowwise() + cvec(P, ly.bq, d);
    t.k = (t.h1 * cmat(P, ly.wk, d, d)).rowwise() + cvec(P, ly.bk, d);
    t.v = (t.h1 * cmat(P, ly.wv, d, d)).rowwise() + cvec(P, ly.bv, d);
    t.attn.resize(c.heads);
    t.o.resize(r, d);
    for (std::size_t h = 0; h < c.heads; ++h) {
      const auto cols = static_cast<Eigen::Index>(h * dh);
      const auto w = static_cast<Eigen::Index>(dh);
      RowMat<T>& a = t.attn[h];
      a.noalias() = t.q.middleCols(cols, w) * t.k.middleCols(cols, w).transpose();
      a *= scale;
      for (Eigen::Index i = 0; i < r; ++i) {
        const T m = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
      }
      t.o.middleCols(cols, w).noalias() = a * t.v.middleCols(cols, w);
    }
    t.y = (t.x.topRows(r) + t.o * cmat(P, ly.wo, d, d)).rowwise() + cvec(P, ly.bo, d);
    layer_norm(t.y, cvec(P, ly.ln2_gain, d), cvec(P, ly.ln2_bias, d), t.xhat2, t.rstd2, t.h2);
    t.u = (t.h2 * cmat(P, ly.w1, d, c.ff_width)).rowwise() + cvec(P, ly.b1, c.ff_width);
    t.g = t.u.unaryExpr([](T v) { return gelu(v); });
    x = (t.y + t.g * cmat(P, ly.w2, c.ff_width, d)).rowwise() + cvec(P, ly.b2, d);
  }
  tape.out = std::move(x);

  const RowMat<T> cls = tape.out.topRows(1);
  RowMat<T> xhatf, pooled;
  ColVec<T> rstdf;
  layer_norm(cls, cvec(P, L.lnf_gain, d), cvec(P, L.lnf_bias, d), xhatf, rstdf, pooled);
  tape.xhatf = xhatf;
  tape.rstdf = rstdf(0);
  tape.pooled = pooled;
  tape.hidden = ((tape.pooled * cmat(P, L.head_w1, d, c.head_hidden)) + cvec(P, L.head_b1, c.head_hidden))
                    .array()
                    .tanh()
                    .matrix();
  tape.score = tape.hidden.dot(cvec(P, L.head_w2, c.head_hidden)) + P[L.head_b2];
  return tape.score;
}

template <typename T>
void backward(const ModelParams<T>& params, const ForwardTape<T>& tape, T dscore, std::span<T> grad) {
  const auto& c = params.config();
  const auto& L = params.layout();
  const T* P = params.data();
  T* G = grad.data();
  const std::size_t n = tape.ids.size();
  const std::size_t d = c.d_model;
  const std::size_t dh = d / c.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // Scoring head.
  mvec(G, L.head_w2, c.head_hidden) += dscore * tape.hidden;
  G[L.head_b2] += dscore;
  const RowVec<T> dhidden = dscore * cvec(P, L.head_w2, c.head_hidden);
  const RowVec<T> da = (dhidden.array() * (T(1) - tape.hidden.array().square())).matrix();
  mmat(G, L.head_w1, d, c.head_hidden) += RowMat<T>(tape.pooled.transpose() * da);
  mvec(G, L.head_b1, c.head_hidden) += da;
  const RowMat<T> dpooled = da * cmat(P, L.head_w1, d, c.head_hidden).transpose();

  RowMat<T> dcls;
  {
    const RowMat<T> xhatf = tape.xhatf;
    ColVec<T> rstdf(1);
    rstdf(0) = tape.rstdf;
    layer_norm_backward(dpooled, xhatf, rstdf, cvec(P, L.lnf_gain, d), mvec(G, L.lnf_gain, d),
                        mvec(G, L.lnf_bias, d), dcls);
  }
  RowMat<T> dout = RowMat<T>::Zero(tape.out.rows(), d);
  dout.row(0) = dcls.row(0);

  for (std::size_t li = c.layers; li-- > 0;) {
    const auto& ly = L.layer[li];
    const auto& t = tape.layers[li];
    const Eigen::Index r = t.y.rows();
    const auto rows_all = static_cast<Eigen::Index>(n);

    // Feed-forward block.
    RowMat<T> dy = dout;
    mmat(G, ly.w2, c.ff_width, d) += RowMat<T>(t.g.transpose() * dout);
    mvec(G, ly.b2, d) += RowVec<T>(dout.colwise().sum());
    const RowMat<T> dg = dout * cmat(P, ly.w2, c.ff_width, d).transpose();
    const RowMat<T> du = dg.array() * t.u.unaryExpr([](T v) { return gelu_grad(v); }).array();
    mmat(G, ly.w1, d, c.ff_width) += RowMat<T>(t.h2.transpose() * du);
    mvec(G, ly.b1, c.ff_width) += RowVec<T>(du.colwise().sum());
    const RowMat<T> dh2 = du * cmat(P, ly.w1, d, c.ff_width).transpose();
    RowMat<T> dy_ln;
    layer_norm_backward(dh2, t.xhat2, t.rstd2, cvec(P, ly.ln2_gain, d), mvec(G, ly.ln2_gain, d),
                        mvec(G, ly.ln2_bias, d), dy_ln);
    dy += dy_ln;

    // Attention block.
    mmat(G, ly.wo, d, d) += RowMat<T>(t.o.transpose() * dy);
    mvec(G, ly.bo, d) += RowVec<T>(dy.colwise().sum());
    const RowMat<T> d_o = dy * cmat(P, ly.wo, d, d).transpose();
    RowMat<T> dq(r, d), dk = RowMat<T>::Zero(rows_all, d), dv = RowMat<T>::Zero(rows_all, d);
    for (std::size_t h = 0; h < c.heads; ++h) {
      const auto cols = static_cast<Eigen::Index>(h * dh);
      const auto w = static_cast<Eigen::Index>(dh);
      const RowMat<T>& a = t.attn[h];
      const RowMat<T> doh = d_o.middleCols(cols, w);
      const RowMat<T> dA = doh * t.v.middleCols(cols, w).transpose();
      dv.middleCols(cols, w).noalias() += a.transpose() * doh;
      const ColVec<T> inner = (dA.array() * a.array()).rowwise().sum();
      RowMat<T> dS = a.array() * (dA.array().colwise() - inner.array());
      dS *= scale;
      dq.middleCols(cols, w).noalias() = dS * t.k.middleCols(cols, w);
      dk.middleCols(cols, w).noalias() += dS.transpose() * t.q.middleCols(cols, w);
    }
    mmat(G, ly.wq, d, d) += RowMat<T>(t.h1.topRows(r).transpose() * dq);
    mvec(G, ly.bq, d) += RowVec<T>(dq.colwise().sum());
    mmat(G, ly.wk, d, d) += RowMat<T>(t.h1.transpose() * dk);
    mvec(G, ly.bk, d) += RowVec<T>(dk.colwise().sum());
    mmat(G, ly.wv, d, d) += RowMat<T>(t.h1.transpose() * dv);
    mvec(G, ly.bv, d) += RowVec<T>(dv.colwise().sum());
    RowMat<T> dh1 = dk * cmat(P, ly.wk, d, d).transpose();
    dh1.noalias() += dv * cmat(P, ly.wv, d, d).transpose();
    dh1.topRows(r).noalias() += dq * cmat(P, ly.wq, d, d).transpose();

    RowMat<T> dx;
    layer_norm_backward(dh1, t.xhat1, t.rstd1, cvec(P, ly.ln1_gain, d), mvec(G, ly.ln1_gain, d),
                        mvec(G, ly.ln1_bias, d), dx);
    dx.topRows(r) += dy;
    dout = std::move(dx);
  }

  auto dtok = mmat(G, L.tok_emb, c.vocab_size, d);
  auto dpos = mmat(G, L.pos_emb, c.max_length, d);
  for (std::size_t i = 0; i < n; ++i) {
    dtok.row(tape.ids[i]) += dout.row(static_cast<Eigen::Index>(i));
    dpos.row(tape.positions[i]) += dout.row(static_cast<Eigen::Index>(i));
  }
}

template <typename T>
T encode_score(const ModelParams<T>& params, std::span<const TokenId> ids) {
  ForwardTape<T> tape;
  return forward(params, ids, tape);
}

template <typename T>
ModelParams<T> init_params(const ArchConfig& config, std::uint64_t seed) {
  ModelParams<T> params(config);
  Rng rng = make_rng(seed, "encoder/init");
  T* P = params.data();
  for (const auto& spec : params.layout().tensors()) {
    const bool is_gain = spec.name.ends_with(".gain");
    const bool is_bias = !is_gain && spec.rows == 1 && !spec.decay;
    if (is_gain) {
      std::fill_n(P + spec.offset, spec.size(), T(1));
    } else if (is_bias) {
      std::fill_n(P + spec.offset, spec.size(), T(0));
    } else {
      // Embedding tables scale by the model width; weight matrices by fan-in.
      const bool embedding = spec.name == "tok_emb" || spec.name == "pos_emb";
      const double fan_in = static_cast<double>(embedding ? spec.cols : spec.rows);
      const double limit = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::size_t i = 0; i < spec.size(); ++i) P[spec.offset + i] = static_cast<T>(dist(rng));
    }
  }
  return params;
}

std::vector<std::vector<TokenId>> serialize_candidates(const RankingContext& ctx,
                                                       std::span<const Document> candidates,
                                                       const Vocabulary& vocab,
                                                       std::size_t max_length) {
  if (candidates.empty()) throw InputError("cannot score an empty candidate list");
  static const BehaviorWindow kEmpty;
  const BehaviorWindow& history = ctx.history ? *ctx.history : kEmpty;
  std::vector<std::vector<TokenId>> out;
  out.reserve(candidates.size());
  for (const auto& doc : candidates) {
    auto input = ctx.future
                     ? serialize_future(history, ctx.query, doc.tokens, *ctx.future, vocab, max_length)
                     : serialize_history(history, ctx.query, doc.tokens, vocab, max_length);
    out.push_back(std::move(input.token_ids));
  }
  return out;
}

template <typename T>
std::vector<double> score_candidates(const ModelParams<T>& params, const RankingContext& ctx,
                                     std::span<const Document> candidates, const Vocabulary& vocab) {
  const auto inputs = serialize_candidates(ctx, candidates, vocab, params.config().max_length);
  std::vector<double> scores;
  scores.reserve(inputs.size());
  ForwardTape<T> tape;
  for (const auto& ids : inputs) scores.push_back(static_cast<double>(forward(params, ids, tape)));
  return scores;
}

#define FORERANKER_INSTANTIATE(T)                                                                  \
  template class ModelParams<T>;                                                                   \
  template T forward<T>(const ModelParams<T>&, std::span<const TokenId>, ForwardTape<T>&);          \
  template void backward<T>(const ModelParams<T>&, const ForwardTape<T>&, T, std::span<T>);         \
  template T encode_score<T>(const ModelParams<T>&, std::span<const TokenId>);                      \
  template ModelParams<T> init_params<T>(const ArchConfig&, std::uint64_t);                         \
  template std::vector<double> score_candidates<T>(const ModelParams<T>&, const RankingContext&,    \
                                                   std::span<const Document>, const Vocabulary&);

FORERANKER_INSTANTIATE(float)
FORERANKER_INSTANTIATE(double)

#undef FORERANKER_INSTANTIATE

}  // namespace foreranker
