// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "unisign/tensor/tensor.hpp"

namespace unisign {

template <class S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapR = Eigen::Map<MatR<S>>;
template <class S>
using CMapR = Eigen::Map<const MatR<S>>;

namespace detail {

inline int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw_shape("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return axis;
}

inline Index prod(const Shape& s, std::size_t from, std::size_t to) {
  Index p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

inline std::vector<Index> strides_of(const Shape& s) {
  std::vector<Index> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

struct BroadcastPlan {
  Shape out;
  std::vector<Index> sa, sb;  // strides in a/b per output axis, 0 where broadcast
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  BroadcastPlan p;
  p.out.resize(r);
  const auto sta = strides_of(pa), stb = strides_of(pb);
  p.sa.resize(r);
  p.sb.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      throw_shape("cannot broadcast " + to_string(a) + " with " + to_string(b));
    p.out[i] = std::max(pa[i], pb[i]);
    p.sa[i] = pa[i] == 1 ? 0 : sta[i];
    p.sb[i] = pb[i] == 1 ? 0 : stb[i];
  }
  return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& body) {
  const int r = static_cast<int>(p.out.size());
  const Index n = numel(p.out);
  std::vector<Index> idx(static_cast<std::size_t>(r), 0);
  Index ia = 0, ib = 0;
  for (Index o = 0; o < n; ++o) {
    body(o, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * p.out[d];
      ib -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

// f(a, b) -> value; da(a, b) and db(a, b) are the partial derivatives.
template <class S, class F, class DA, class DB>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, F f, DA da, DB db) {
  const auto av = a.data(), bv = b.data();
  if (a.shape() == b.shape()) {
    Buffer<S> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result<S>(a.shape(), std::move(out), {a, b}, [da, db](Node<S>& o) {
      auto* pa = grad_parent(o, 0);
      auto* pb = grad_parent(o, 1);
      const auto& x = o.parents[0]->value;
      const auto& y = o.parents[1]->value;
      if (pa) {
        S* g = pa->grad_data();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * da(x[i], y[i]);
      }
      if (pb) {
        S* g = pb->grad_data();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * db(x[i], y[i]);
      }
    });
  }
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  Buffer<S> out(static_cast<std::size_t>(numel(plan->out)));
  for_each_broadcast(*plan, [&](Index o, Index ia, Index ib) { out[o] = f(av[ia], bv[ib]); });
  return make_result<S>(plan->out, std::move(out), {a, b}, [plan, da, db](Node<S>& o) {
    auto* pa = grad_parent(o, 0);
    auto* pb = grad_parent(o, 1);
    const auto& x = o.parents[0]->value;
    const auto& y = o.parents[1]->value;
    S* ga = pa ? pa->grad_data() : nullptr;
    S* gb = pb ? pb->grad_data() : nullptr;
    for_each_broadcast(*plan, [&](Index i, Index ia, Index ib) {
      if (ga) ga[ia] += o.grad[i] * da(x[ia], y[ib]);
      if (gb) gb[ib] += o.grad[i] * db(x[ia], y[ib]);
    });
  });
}

// f(x) -> y; df(x, y) -> dy/dx.
template <class S, class F, class DF>
Tensor<S> unary(const Tensor<S>& a, F f, DF df) {
  const auto av = a.data();
  Buffer<S> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result<S>(a.shape(), std::move(out), {a}, [df](Node<S>& o) {
    auto* p = grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    const auto& x = p->value;
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * df(x[i], o.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary(a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
                        [](S, S) { return S(1); });
}
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary(a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
                        [](S, S) { return S(-1); });
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary(a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
                        [](S x, S) { return x; });
}
template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

template <class S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  return detail::unary(a, [s](S x) { return x * s; }, [s](S, S) { return s; });
}
template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S s) {
  return detail::unary(a, [s](S x) { return x + s; }, [](S, S) { return S(1); });
}
template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary(a, [](S x) { return x < S(0) ? S(0) : x; }, [](S x, S) { return x > S(0) ? S(1) : S(0); });
}
template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary(a, [](S x) { return S(1) / (S(1) + std::exp(-x)); }, [](S, S y) { return y * (S(1) - y); });
}
template <class S>
Tensor<S> tanh(const Tensor<S>& a) {
  return detail::unary(a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}
template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}
template <class S>
Tensor<S> log(const Tensor<S>& a) {
  return detail::unary(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}
/// GELU, tanh approximation.
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  constexpr S k = S(0.7978845608028654);
  constexpr S c = S(0.044715);
  return detail::unary(
      a, [](S x) { return S(0.5) * x * (S(1) + std::tanh(k * (x + c * x * x * x))); },
      [](S x, S) {
        const S u = k * (x + c * x * x * x);
        const S t = std::tanh(u);
        return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * k * (S(1) + S(3) * c * x * x);
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n]
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    detail::throw_shape("matmul " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<S> out(static_cast<std::size_t>(m * n));
  MapR<S>(out.data(), m, n).noalias() = CMapR<S>(a.data().data(), m, k) * CMapR<S>(b.data().data(), k, n);
  return detail::make_result<S>({m, n}, std::move(out), {a, b}, [m, k, n](Node<S>& o) {
    CMapR<S> dy(o.grad.data(), m, n);
    if (auto* pa = detail::grad_parent(o, 0))
      MapR<S>(pa->grad_data(), m, k).noalias() += dy * CMapR<S>(o.parents[1]->value.data(), k, n).transpose();
    if (auto* pb = detail::grad_parent(o, 1))
      MapR<S>(pb->grad_data(), k, n).noalias() += CMapR<S>(o.parents[0]->value.data(), m, k).transpose() * dy;
  });
}

/// x[..., in] * w[in, out] + b[out]; `b` may be undefined.
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b = {}) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0))
    detail::throw_shape("linear " + to_string(x.shape()) + " x " + to_string(w.shape()));
  const Index in = w.dim(0), outd = w.dim(1), rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = outd;
  Buffer<S> out(static_cast<std::size_t>(rows * outd));
  MapR<S> y(out.data(), rows, outd);
  y.noalias() = CMapR<S>(x.data().data(), rows, in) * CMapR<S>(w.data().data(), in, outd);
  const bool has_bias = b.defined();
  if (has_bias) {
    if (b.size() != outd) detail::throw_shape("linear bias " + to_string(b.shape()));
    y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data().data(), outd);
  }
  std::vector<Tensor<S>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return detail::make_result<S>(std::move(shape), std::move(out), std::move(parents), [rows, in, outd, has_bias](Node<S>& o) {
    CMapR<S> dy(o.grad.data(), rows, outd);
    if (auto* px = detail::grad_parent(o, 0))
      MapR<S>(px->grad_data(), rows, in).noalias() += dy * CMapR<S>(o.parents[1]->value.data(), in, outd).transpose();
    if (auto* pw = detail::grad_parent(o, 1))
      MapR<S>(pw->grad_data(), in, outd).noalias() += CMapR<S>(o.parents[0]->value.data(), rows, in).transpose() * dy;
    if (has_bias)
      if (auto* pb = detail::grad_parent(o, 2))
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(pb->grad_data(), outd) += dy.colwise().sum();
  });
}

/// Batched [B,m,k] x [B,k,n] -> [B,m,n]; with `trans_b` the second operand is [B,n,k].
template <class S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool trans_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != (trans_b ? b.dim(2) : b.dim(1)))
    detail::throw_shape("bmm " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const Index B = a.dim(0), m = a.dim(1), k = a.dim(2), n = trans_b ? b.dim(1) : b.dim(2);
  Buffer<S> out(static_cast<std::size_t>(B * m * n));
  for (Index i = 0; i < B; ++i) {
    CMapR<S> A(a.data().data() + i * m * k, m, k);
    MapR<S> Y(out.data() + i * m * n, m, n);
    if (trans_b)
      Y.noalias() = A * CMapR<S>(b.data().data() + i * n * k, n, k).transpose();
    else
      Y.noalias() = A * CMapR<S>(b.data().data() + i * k * n, k, n);
  }
  return detail::make_result<S>({B, m, n}, std::move(out), {a, b}, [B, m, k, n, trans_b](Node<S>& o) {
    auto* pa = detail::grad_parent(o, 0);
    auto* pb = detail::grad_parent(o, 1);
    for (Index i = 0; i < B; ++i) {
      CMapR<S> dy(o.grad.data() + i * m * n, m, n);
      CMapR<S> A(o.parents[0]->value.data() + i * m * k, m, k);
      if (trans_b) {
        CMapR<S> Bt(o.parents[1]->value.data() + i * n * k, n, k);
        if (pa) MapR<S>(pa->grad_data() + i * m * k, m, k).noalias() += dy * Bt;
        if (pb) MapR<S>(pb->grad_data() + i * n * k, n, k).noalias() += dy.transpose() * A;
      } else {
        CMapR<S> Bm(o.parents[1]->value.data() + i * k * n, k, n);
        if (pa) MapR<S>(pa->grad_data() + i * m * k, m, k).noalias() += dy * Bm.transpose();
        if (pb) MapR<S>(pb->grad_data() + i * k * n, k, n).noalias() += A.transpose() * dy;
      }
    }
  });
}

/// Mixes the node axis of x[T,N,C] with a constant matrix: y[t] = A * x[t].
template <class S>
Tensor<S> node_mix(std::shared_ptr<const Buffer<S>> adjacency, const Tensor<S>& x) {
  if (x.rank() != 3) detail::throw_shape("node_mix expects [T,N,C], got " + to_string(x.shape()));
  const Index T = x.dim(0), N = x.dim(1), C = x.dim(2);
  if (static_cast<Index>(adjacency->size()) != N * N)
    throw ConfigMismatch("adjacency has " + std::to_string(adjacency->size()) + " entries for " + std::to_string(N) + " nodes");
  Buffer<S> out(static_cast<std::size_t>(T * N * C));
  CMapR<S> A(adjacency->data(), N, N);
  for (Index t = 0; t < T; ++t)
    MapR<S>(out.data() + t * N * C, N, C).noalias() = A * CMapR<S>(x.data().data() + t * N * C, N, C);
  return detail::make_result<S>(x.shape(), std::move(out), {x}, [adjacency, T, N, C](Node<S>& o) {
    auto* px = detail::grad_parent(o, 0);
    if (!px) return;
    CMapR<S> A(adjacency->data(), N, N);
    for (Index t = 0; t < T; ++t)
      MapR<S>(px->grad_data() + t * N * C, N, C).noalias() += A.transpose() * CMapR<S>(o.grad.data() + t * N * C, N, C);
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax (last axis)

template <class S>
Tensor<S> softmax(const Tensor<S>& x) {
  const Index D = x.dim(-1), rows = x.size() / D;
  Buffer<S> out(x.data().begin(), x.data().end());
  for (Index r = 0; r < rows; ++r) {
    S* row = out.data() + r * D;
    const S mx = *std::max_element(row, row + D);
    S sum = 0;
    for (Index j = 0; j < D; ++j) sum += (row[j] = std::exp(row[j] - mx));
    for (Index j = 0; j < D; ++j) row[j] /= sum;
  }
  return detail::make_result<S>(x.shape(), std::move(out), {x}, [D, rows](Node<S>& o) {
    auto* px = detail::grad_parent(o, 0);
    if (!px) return;
    S* g = px->grad_data();
    for (Index r = 0; r < rows; ++r) {
      const S* y = o.value.data() + r * D;
      const S* dy = o.grad.data() + r * D;
      S dot = 0;
      for (Index j = 0; j < D; ++j) dot += dy[j] * y[j];
      for (Index j = 0; j < D; ++j) g[r * D + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <class S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  const Index D = x.dim(-1), rows = x.size() / D;
  Buffer<S> out(x.data().begin(), x.data().end());
  for (Index r = 0; r < rows; ++r) {
    S* row = out.data() + r * D;
    const S mx = *std::max_element(row, row + D);
    S sum = 0;
    for (Index j = 0; j < D; ++j) sum += std::exp(row[j] - mx);
    const S lse = mx + std::log(sum);
    for (Index j = 0; j < D; ++j) row[j] -= lse;
  }
  return detail::make_result<S>(x.shape(), std::move(out), {x}, [D, rows](Node<S>& o) {
    auto* px = detail::grad_parent(o, 0);
    if (!px) return;
    S* g = px->grad_data();
    for (Index r = 0; r < rows; ++r) {
      const S* y = o.value.data() + r * D;
      const S* dy = o.grad.data() + r * D;
      S sum = 0;
      for (Index j = 0; j < D; ++j) sum += dy[j];
      for (Index j = 0; j < D; ++j) g[r * D + j] += dy[j] - std::exp(y[j]) * sum;
    }
  });
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5)) {
  const Index D = x.dim(-1), rows = x.size() / D;
  if (gamma.size() != D || beta.size() != D) detail::throw_shape("layer_norm parameter size mismatch");
  auto stats = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows * 2));  // mean, rstd
  Buffer<S> out(static_cast<std::size_t>(x.size()));
  const S* xv = x.data().data();
  const S* gv = gamma.data().data();
  const S* bv = beta.data().data();
  for (Index r = 0; r < rows; ++r) {
    const S* row = xv + r * D;
    S mean = 0;
    for (Index j = 0; j < D; ++j) mean += row[j];
    mean /= S(D);
    S var = 0;
    for (Index j = 0; j < D; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= S(D);
    const S rstd = S(1) / std::sqrt(var + eps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = rstd;
    for (Index j = 0; j < D; ++j) out[r * D + j] = (row[j] - mean) * rstd * gv[j] + bv[j];
  }
  return detail::make_result<S>(x.shape(), std::move(out), {x, gamma, beta}, [stats, D, rows](Node<S>& o) {
    auto* px = detail::grad_parent(o, 0);
    auto* pg = detail::grad_parent(o, 1);
    auto* pb = detail::grad_parent(o, 2);
    const S* xv = o.parents[0]->value.data();
    const S* gv = o.parents[1]->value.data();
    std::vector<S> xhat(static_cast<std::size_t>(D)), dxhat(static_cast<std::size_t>(D));
    for (Index r = 0; r < rows; ++r) {
      const S mean = (*stats)[2 * r], rstd = (*stats)[2 * r + 1];
      const S* dy = o.grad.data() + r * D;
      S m1 = 0, m2 = 0;
      for (Index j = 0; j < D; ++j) {
        xhat[j] = (xv[r * D + j] - mean) * rstd;
        dxhat[j] = dy[j] * gv[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * xhat[j];
      }
      m1 /= S(D);
      m2 /= S(D);
      if (px) {
        S* g = px->grad_data() + r * D;
        for (Index j = 0; j < D; ++j) g[j] += rstd * (dxhat[j] - m1 - xhat[j] * m2);
      }
      if (pg) {
        S* g = pg->grad_data();
        for (Index j = 0; j < D; ++j) g[j] += dy[j] * xhat[j];
      }
      if (pb) {
        S* g = pb->grad_data();
        for (Index j = 0; j < D; ++j) g[j] += dy[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) infer = static_cast<int>(i);
    else known *= shape[i];
  }
  if (infer >= 0) shape[infer] = known ? x.size() / known : 0;
  if (numel(shape) != x.size()) detail::throw_shape("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  Buffer<S> out(x.data().begin(), x.data().end());
  return detail::make_result<S>(std::move(shape), std::move(out), {x}, [](Node<S>& o) {
    auto* px = detail::grad_parent(o, 0);
    if (!px) return;
    S* g = px->grad_data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

/// General axis permutation.
template <class S>
Tensor<S> permute(const Tensor<S>& x, std::vector<int> perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) detail::throw_shape("permute rank mismatch");
  const auto in_strides = detail::strides_of(x.shape());
  Shape out_shape(r);
  std::vector<Index> src_strides(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // Gather map: output position -> input position.
  auto map = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.size()));
  detail::BroadcastPlan plan{out_shape, src_strides, std::vector<Index>(r, 0)};
  detail::for_each_broadcast(plan, [&](Index o, Index ia, Index) { (*map)[o] = ia; });
  Buffer<S> out(static_cast<std::size_t>(x.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[(*map)[i]];
  return detail::make_result<S>(std::move(out_shape), std::move(out), {x}, [map](Node<S>& o) {
    auto* px = detail::grad_parent(o, 0);
    if (!px) return;
    S* g = px->grad_data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i];
  });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) detail::throw_shape("transpose expects rank 2");
  return permute(x, {1, 0});
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  if (xs.empty()) detail::throw_shape("concat of nothing");
  const int r = xs.front().rank();
  axis = detail::norm_axis(axis, r);
  Shape shape = xs.front().shape();
  shape[axis] = 0;
  for (const auto& x : xs) {
    if (x.rank() != r) detail::throw_shape("concat rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && x.shape()[i] != xs.front().shape()[i])
        detail::throw_shape("concat " + to_string(x.shape()) + " vs " + to_string(xs.front().shape()));
    shape[axis] += x.shape()[axis];
  }
  const Index outer = detail::prod(shape, 0, axis), inner = detail::prod(shape, axis + 1, shape.size());
  const Index out_row = shape[axis] * inner;
  Buffer<S> out(static_cast<std::size_t>(numel(shape)));
  auto blocks = std::make_shared<std::vector<Index>>();  // per input: width*inner
  Index offset = 0;
  for (const auto& x : xs) {
    const Index w = x.shape()[axis] * inner;
    for (Index o = 0; o < outer; ++o)
      std::copy_n(x.data().data() + o * w, w, out.data() + o * out_row + offset);
    blocks->push_back(w);
    offset += w;
  }
  return detail::make_result<S>(std::move(shape), std::move(out), xs, [blocks, outer, out_row](Node<S>& o) {
    Index offset = 0;
    for (std::size_t i = 0; i < blocks->size(); ++i) {
      const Index w = (*blocks)[i];
      if (auto* p = detail::grad_parent(o, i)) {
        S* g = p->grad_data();
        for (Index k = 0; k < outer; ++k)
          for (Index j = 0; j < w; ++j) g[k * w + j] += o.grad[k * out_row + offset + j];
      }
      offset += w;
    }
  });
}

template <class S>
Tensor<S> stack(const std::vector<Tensor<S>>& xs) {
  std::vector<Tensor<S>> rs;
  rs.reserve(xs.size());
  for (const auto& x : xs) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    rs.push_back(reshape(x, s));
  }
  return concat(rs, 0);
}

/// Elements [begin, end) along `axis`.
template <class S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index begin, Index end) {
  axis = detail::norm_axis(axis, x.rank());
  const Index len = x.shape()[axis];
  if (begin < 0 || end > len || begin > end) throw IndexOutOfRange("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + std::to_string(len));
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const Index outer = detail::prod(shape, 0, axis), inner = detail::prod(shape, axis + 1, shape.size());
  const Index w = (end - begin) * inner, in_row = len * inner, off = begin * inner;
  Buffer<S> out(static_cast<std::size_t>(outer * w));
  for (Index o = 0; o < outer; ++o) std::copy_n(x.data().data() + o * in_row + off, w, out.data() + o * w);
  return detail::make_result<S>(std::move(shape), std::move(out), {x}, [outer, w, in_row, off](Node<S>& o) {
    auto* p = detail::grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    for (Index k = 0; k < outer; ++k)
      for (Index j = 0; j < w; ++j) g[k * in_row + off + j] += o.grad[k * w + j];
  });
}

/// Gathers entries `idx` along `axis`.
template <class S>
Tensor<S> index_select(const Tensor<S>& x, int axis, std::vector<Index> idx) {
  axis = detail::norm_axis(axis, x.rank());
  const Index len = x.shape()[axis];
  for (Index i : idx)
    if (i < 0 || i >= len) throw IndexOutOfRange("index " + std::to_string(i) + " outside [0," + std::to_string(len) + ")");
  Shape shape = x.shape();
  shape[axis] = static_cast<Index>(idx.size());
  const Index outer = detail::prod(shape, 0, axis), inner = detail::prod(shape, axis + 1, shape.size());
  const Index K = static_cast<Index>(idx.size());
  Buffer<S> out(static_cast<std::size_t>(outer * K * inner));
  for (Index o = 0; o < outer; ++o)
    for (Index k = 0; k < K; ++k)
      std::copy_n(x.data().data() + (o * len + idx[k]) * inner, inner, out.data() + (o * K + k) * inner);
  auto ids = std::make_shared<std::vector<Index>>(std::move(idx));
  return detail::make_result<S>(std::move(shape), std::move(out), {x}, [ids, outer, len, inner](Node<S>& o) {
    auto* p = detail::grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    const Index K = static_cast<Index>(ids->size());
    for (Index b = 0; b < outer; ++b)
      for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < inner; ++j) g[(b * len + (*ids)[k]) * inner + j] += o.grad[(b * K + k) * inner + j];
  });
}

/// Copy of `base` whose leading-axis rows `idx[k]` are replaced by `src[k]`.
/// With repeated indices the last write wins.
template <class S>
Tensor<S> scatter_rows(const Tensor<S>& base, const Tensor<S>& src, const std::vector<Index>& idx) {
  const Index T = base.dim(0), K = static_cast<Index>(idx.size());
  const Index row = T ? base.size() / T : 0;
  if (src.size() != K * row) detail::throw_shape("scatter_rows: source " + to_string(src.shape()) + " for " + std::to_string(K) + " rows of base " + to_string(base.shape()));
  auto writer = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(T), Index{-1});
  for (Index k = 0; k < K; ++k) {
    if (idx[k] < 0 || idx[k] >= T) throw IndexOutOfRange("scatter index " + std::to_string(idx[k]) + " outside [0," + std::to_string(T) + ")");
    (*writer)[idx[k]] = k;
  }
  Buffer<S> out(base.data().begin(), base.data().end());
  for (Index t = 0; t < T; ++t)
    if ((*writer)[t] >= 0) std::copy_n(src.data().data() + (*writer)[t] * row, row, out.data() + t * row);
  return detail::make_result<S>(base.shape(), std::move(out), {base, src}, [writer, T, row](Node<S>& o) {
    auto* pb = detail::grad_parent(o, 0);
    auto* ps = detail::grad_parent(o, 1);
    S* gb = pb ? pb->grad_data() : nullptr;
    S* gs = ps ? ps->grad_data() : nullptr;
    for (Index t = 0; t < T; ++t) {
      const Index k = (*writer)[t];
      S* dst = k < 0 ? gb : (gs ? gs + k * row : nullptr);
      if (!dst) continue;
      if (k < 0) dst += t * row;
      for (Index j = 0; j < row; ++j) dst[j] += o.grad[t * row + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Tensor<S> sum(const Tensor<S>& x, int axis) {
  axis = detail::norm_axis(axis, x.rank());
  Shape shape = x.shape();
  const Index len = shape[axis];
  const Index outer = detail::prod(shape, 0, axis), inner = detail::prod(shape, axis + 1, shape.size());
  shape.erase(shape.begin() + axis);
  Buffer<S> out(static_cast<std::size_t>(outer * inner), S(0));
  for (Index o = 0; o < outer; ++o)
    for (Index a = 0; a < len; ++a)
      for (Index j = 0; j < inner; ++j) out[o * inner + j] += x.data()[(o * len + a) * inner + j];
  return detail::make_result<S>(std::move(shape), std::move(out), {x}, [outer, len, inner](Node<S>& o) {
    auto* p = detail::grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    for (Index b = 0; b < outer; ++b)
      for (Index a = 0; a < len; ++a)
        for (Index j = 0; j < inner; ++j) g[(b * len + a) * inner + j] += o.grad[b * inner + j];
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& x, int axis) {
  const Index len = x.dim(axis);
  return scale(sum(x, axis), S(1) / S(len));
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S total = 0;
  for (S v : x.data()) total += v;
  return detail::make_result<S>({}, {total}, {x}, [](Node<S>& o) {
    auto* p = detail::grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += o.grad[0];
  });
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return scale(sum_all(x), S(1) / S(x.size()));
}

/// Picks x[u, targets[u]] from a [U,V] tensor.
template <class S>
Tensor<S> pick(const Tensor<S>& x, const std::vector<Index>& targets) {
  if (x.rank() != 2 || x.dim(0) != static_cast<Index>(targets.size()))
    detail::throw_shape("pick " + to_string(x.shape()) + " with " + std::to_string(targets.size()) + " targets");
  const Index U = x.dim(0), V = x.dim(1);
  Buffer<S> out(static_cast<std::size_t>(U));
  for (Index u = 0; u < U; ++u) {
    if (targets[u] < 0 || targets[u] >= V) throw IndexOutOfRange("target id " + std::to_string(targets[u]));
    out[u] = x.data()[u * V + targets[u]];
  }
  auto ids = std::make_shared<std::vector<Index>>(targets);
  return detail::make_result<S>({U}, std::move(out), {x}, [ids, V](Node<S>& o) {
    auto* p = detail::grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    for (std::size_t u = 0; u < ids->size(); ++u) g[static_cast<Index>(u) * V + (*ids)[u]] += o.grad[u];
  });
}

// ---------------------------------------------------------------------------
// Convolution helpers

/// x[T,M,C] -> [T,M,K*C]: window of K frames centered on t, zero padded.
template <class S>
Tensor<S> unfold_time(const Tensor<S>& x, Index K) {
  if (x.rank() != 3 || K % 2 == 0) detail::throw_shape("unfold_time expects [T,M,C] and odd kernel");
  const Index T = x.dim(0), M = x.dim(1), C = x.dim(2), half = K / 2;
  Buffer<S> out(static_cast<std::size_t>(T * M * K * C), S(0));
  for (Index t = 0; t < T; ++t)
    for (Index k = 0; k < K; ++k) {
      const Index src = t + k - half;
      if (src < 0 || src >= T) continue;
      for (Index m = 0; m < M; ++m)
        std::copy_n(x.data().data() + (src * M + m) * C, C, out.data() + ((t * M + m) * K + k) * C);
    }
  return detail::make_result<S>({T, M, K * C}, std::move(out), {x}, [T, M, C, K, half](Node<S>& o) {
    auto* p = detail::grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    for (Index t = 0; t < T; ++t)
      for (Index k = 0; k < K; ++k) {
        const Index src = t + k - half;
        if (src < 0 || src >= T) continue;
        for (Index m = 0; m < M; ++m) {
          const S* dy = o.grad.data() + ((t * M + m) * K + k) * C;
          S* dx = g + (src * M + m) * C;
          for (Index c = 0; c < C; ++c) dx[c] += dy[c];
        }
      }
  });
}

/// x[B,H,W,C] -> [B,Ho,Wo,k*k*C] patches ordered (ky, kx, c), zero padded.
template <class S>
Tensor<S> im2col(const Tensor<S>& x, Index k, Index stride, Index pad) {
  if (x.rank() != 4) detail::throw_shape("im2col expects [B,H,W,C]");
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const Index Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  const Index P = k * k * C;
  // Source offset per output element, -1 for padding.
  auto src = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * Ho * Wo * k * k), Index{-1});
  Buffer<S> out(static_cast<std::size_t>(B * Ho * Wo * P), S(0));
  Index cell = 0;
  for (Index b = 0; b < B; ++b)
    for (Index oy = 0; oy < Ho; ++oy)
      for (Index ox = 0; ox < Wo; ++ox)
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx, ++cell) {
            const Index iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            const Index s = ((b * H + iy) * W + ix) * C;
            (*src)[cell] = s;
            std::copy_n(x.data().data() + s, C, out.data() + cell * C);
          }
  return detail::make_result<S>({B, Ho, Wo, P}, std::move(out), {x}, [src, C](Node<S>& o) {
    auto* p = detail::grad_parent(o, 0);
    if (!p) return;
    S* g = p->grad_data();
    for (std::size_t cell = 0; cell < src->size(); ++cell) {
      const Index s = (*src)[cell];
      if (s < 0) continue;
      const S* dy = o.grad.data() + static_cast<Index>(cell) * C;
      for (Index c = 0; c < C; ++c) g[s + c] += dy[c];
    }
  });
}

// ---------------------------------------------------------------------------
// Bilinear sampling

namespace detail {
template <class S>
struct BilinearTap {
  Index x0, x1, y0, y1;
  S wx, wy;
  S du_scale, dv_scale;  // d(pixel)/d(unit), zero where clamped
};

/// Maps a unit-square location to its four taps. Cell (j, i) has its center at
/// ((j + 0.5) / w, (i + 0.5) / h); indices beyond the border repeat the edge.
template <class S>
BilinearTap<S> bilinear_tap(S u, S v, Index h, Index w) {
  BilinearTap<S> t{};
  t.du_scale = (u >= S(0) && u <= S(1)) ? S(w) : S(0);
  t.dv_scale = (v >= S(0) && v <= S(1)) ? S(h) : S(0);
  u = std::clamp(u, S(0), S(1));
  v = std::clamp(v, S(0), S(1));
  const S x = u * S(w) - S(0.5), y = v * S(h) - S(0.5);
  const S fx = std::floor(x), fy = std::floor(y);
  t.wx = x - fx;
  t.wy = y - fy;
  const auto clampi = [](Index i, Index n) { return std::clamp<Index>(i, 0, n - 1); };
  t.x0 = clampi(static_cast<Index>(fx), w);
  t.x1 = clampi(static_cast<Index>(fx) + 1, w);
  t.y0 = clampi(static_cast<Index>(fy), h);
  t.y1 = clampi(static_cast<Index>(fy) + 1, h);
  return t;
}
}  // namespace detail

/// Samples map[h,w,C] at points[P,2] given as (u, v) in [0,1]^2 -> [P,C].
/// Differentiable in both the map and the point locations.
template <class S>
Tensor<S> grid_sample(const Tensor<S>& map, const Tensor<S>& points) {
  if (map.rank() != 3 || points.rank() != 2 || points.dim(1) != 2)
    detail::throw_shape("grid_sample " + to_string(map.shape()) + " at " + to_string(points.shape()));
  const Index h = map.dim(0), w = map.dim(1), C = map.dim(2), P = points.dim(0);
  Buffer<S> out(static_cast<std::size_t>(P * C));
  const S* mv = map.data().data();
  for (Index p = 0; p < P; ++p) {
    const auto t = detail::bilinear_tap(points.data()[2 * p], points.data()[2 * p + 1], h, w);
    const S* v00 = mv + (t.y0 * w + t.x0) * C;
    const S* v01 = mv + (t.y0 * w + t.x1) * C;
    const S* v10 = mv + (t.y1 * w + t.x0) * C;
    const S* v11 = mv + (t.y1 * w + t.x1) * C;
    S* o = out.data() + p * C;
    for (Index c = 0; c < C; ++c)
      o[c] = (S(1) - t.wy) * ((S(1) - t.wx) * v00[c] + t.wx * v01[c]) + t.wy * ((S(1) - t.wx) * v10[c] + t.wx * v11[c]);
  }
  return detail::make_result<S>({P, C}, std::move(out), {map, points}, [h, w, C, P](Node<S>& o) {
    auto* pm = detail::grad_parent(o, 0);
    auto* pp = detail::grad_parent(o, 1);
    const S* mv = o.parents[0]->value.data();
    const S* pv = o.parents[1]->value.data();
    S* gm = pm ? pm->grad_data() : nullptr;
    S* gp = pp ? pp->grad_data() : nullptr;
    for (Index p = 0; p < P; ++p) {
      const auto t = detail::bilinear_tap(pv[2 * p], pv[2 * p + 1], h, w);
      const Index i00 = (t.y0 * w + t.x0) * C, i01 = (t.y0 * w + t.x1) * C;
      const Index i10 = (t.y1 * w + t.x0) * C, i11 = (t.y1 * w + t.x1) * C;
      const S* dy = o.grad.data() + p * C;
      if (gm) {
        const S a = (S(1) - t.wy) * (S(1) - t.wx), b = (S(1) - t.wy) * t.wx;
        const S c = t.wy * (S(1) - t.wx), d = t.wy * t.wx;
        for (Index k = 0; k < C; ++k) {
          gm[i00 + k] += a * dy[k];
          gm[i01 + k] += b * dy[k];
          gm[i10 + k] += c * dy[k];
          gm[i11 + k] += d * dy[k];
        }
      }
      if (gp) {
        S dx = 0, dyy = 0;
        for (Index k = 0; k < C; ++k) {
          const S v00 = mv[i00 + k], v01 = mv[i01 + k], v10 = mv[i10 + k], v11 = mv[i11 + k];
          dx += dy[k] * ((S(1) - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
          dyy += dy[k] * ((S(1) - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
        }
        gp[2 * p] += dx * t.du_scale;
        gp[2 * p + 1] += dyy * t.dv_scale;
      }
    }
  });
}

}  // namespace unisign
