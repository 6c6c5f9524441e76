// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "unisign/nn/params.hpp"
#include "unisign/tensor/ops.hpp"

namespace unisign::nn {

template <class S>
class Linear {
 public:
  using scalar_type = S;

  Linear() = default;
  Linear(Index in, Index out, Rng& rng, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = param_uniform<S>({in, out}, bound, rng);
    // Zero bias: small-magnitude inputs (root-relative keypoints) would otherwise be swamped.
    if (bias) this->bias = Tensor<S>::zeros({out}, true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, weight, bias); }

  void zero_init() {
    std::fill(weight.mutable_data().begin(), weight.mutable_data().end(), S(0));
    if (bias.defined()) std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), S(0));
  }

  Index in_features() const { return weight.dim(0); }
  Index out_features() const { return weight.dim(1); }

  void collect_params(ParamList<S>& out) {
    out.add("weight", weight);
    if (bias.defined()) out.add("bias", bias);
  }

  Tensor<S> weight;
  Tensor<S> bias;
};

template <class S>
class LayerNorm {
 public:
  using scalar_type = S;

  LayerNorm() = default;
  explicit LayerNorm(Index dim) : gamma(param_full<S>({dim}, S(1))), beta(param_full<S>({dim}, S(0))) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }

  void collect_params(ParamList<S>& out) {
    out.add("gamma", gamma);
    out.add("beta", beta);
  }

  Tensor<S> gamma;
  Tensor<S> beta;
};

template <class S>
class Embedding {
 public:
  using scalar_type = S;

  Embedding() = default;
  Embedding(Index vocab, Index dim, Rng& rng) : table(param_normal<S>({vocab, dim}, 1.0, rng)) {}

  Tensor<S> operator()(const std::vector<Index>& ids) const { return index_select(table, 0, ids); }

  void collect_params(ParamList<S>& out) { out.add("table", table); }

  Tensor<S> table;
};

/// Multi-head scaled dot-product attention over [L, D] sequences.
template <class S>
class MultiHeadAttention {
 public:
  using scalar_type = S;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index dim, Index heads, Rng& rng)
      : heads_(heads), q_(dim, dim, rng), k_(dim, dim, rng), v_(dim, dim, rng), o_(dim, dim, rng) {
    if (dim % heads != 0) throw ConfigMismatch("attention heads must divide the model width");
  }

  /// `mask`, when given, is added to the [Lq, Lk] scores before the softmax.
  Tensor<S> operator()(const Tensor<S>& query, const Tensor<S>& memory, const Tensor<S>& mask = {}) const {
    return o_(attend(query, memory, mask));
  }

  /// Attention output before the output projection, [Lq, D].
  Tensor<S> attend(const Tensor<S>& query, const Tensor<S>& memory, const Tensor<S>& mask = {}) const {
    const Index Lq = query.dim(0), Lk = memory.dim(0), D = query.dim(1), d = D / heads_;
    auto split = [&](const Tensor<S>& x, Index L) { return permute(reshape(x, {L, heads_, d}), {1, 0, 2}); };
    auto q = split(q_(query), Lq);
    auto k = split(k_(memory), Lk);
    auto v = split(v_(memory), Lk);
    auto scores = scale(bmm(q, k, true), S(1) / std::sqrt(S(d)));
    if (mask.defined()) scores = add(scores, reshape(mask, {1, Lq, Lk}));
    auto ctx = bmm(softmax(scores), v);
    return reshape(permute(ctx, {1, 0, 2}), {Lq, D});
  }

  Index heads() const { return heads_; }

  void collect_params(ParamList<S>& out) {
    out.child("q", q_);
    out.child("k", k_);
    out.child("v", v_);
    out.child("o", o_);
  }

 private:
  Index heads_ = 1;
  Linear<S> q_, k_, v_, o_;
};

template <class S>
class FeedForward {
 public:
  using scalar_type = S;

  FeedForward() = default;
  FeedForward(Index dim, Index hidden, Rng& rng) : up_(dim, hidden, rng), down_(hidden, dim, rng) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return down_(gelu(up_(x))); }

  void collect_params(ParamList<S>& out) {
    out.child("up", up_);
    out.child("down", down_);
  }

 private:
  Linear<S> up_, down_;
};

/// Single-layer LSTM over a [T, in] sequence, returning hidden states [T, H].
template <class S>
class Lstm {
 public:
  using scalar_type = S;

  Lstm() = default;
  Lstm(Index in, Index hidden, Rng& rng) : hidden_(hidden), input_(in, 4 * hidden, rng), recurrent_(hidden, 4 * hidden, rng, false) {
    // Forget-gate bias starts at 1.
    auto b = input_.bias.mutable_data();
    for (Index j = hidden; j < 2 * hidden; ++j) b[j] = S(1);
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    const Index T = x.dim(0), H = hidden_;
    auto projected = input_(x);
    auto h = Tensor<S>::zeros({1, H});
    auto c = Tensor<S>::zeros({1, H});
    std::vector<Tensor<S>> outputs;
    outputs.reserve(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
      auto gates = add(slice(projected, 0, t, t + 1), recurrent_(h));
      auto i = sigmoid(slice(gates, 1, 0, H));
      auto f = sigmoid(slice(gates, 1, H, 2 * H));
      auto g = tanh(slice(gates, 1, 2 * H, 3 * H));
      auto o = sigmoid(slice(gates, 1, 3 * H, 4 * H));
      c = add(mul(f, c), mul(i, g));
      h = mul(o, tanh(c));
      outputs.push_back(h);
    }
    return concat(outputs, 0);
  }

  void collect_params(ParamList<S>& out) {
    out.child("input", input_);
    out.child("recurrent", recurrent_);
  }

 private:
  Index hidden_ = 0;
  Linear<S> input_, recurrent_;
};

/// Fixed sinusoidal position table [L, D].
template <class S>
Tensor<S> sinusoidal_positions(Index length, Index dim) {
  std::vector<S> v(static_cast<std::size_t>(length * dim));
  for (Index p = 0; p < length; ++p)
    for (Index i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      v[p * dim + i] = static_cast<S>(i % 2 == 0 ? std::sin(p * freq) : std::cos(p * freq));
    }
  return Tensor<S>::from(std::move(v), {length, dim});
}

}  // namespace unisign::nn
