// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "unisign/tensor/ops.hpp"

namespace unisign::nn {

namespace detail {
inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}
}  // namespace detail

/// Connectionist temporal classification loss, -log p(target | frames).
///
/// `log_probs` is [T, V] of per-frame log-probabilities; `target` holds label
/// ids that never equal `blank`. Returns +inf (with zero gradient) when the
/// target cannot be aligned to T frames.
template <class S>
Tensor<S> ctc_loss(const Tensor<S>& log_probs, const std::vector<Index>& target, Index blank = 0) {
  if (log_probs.rank() != 2) unisign::detail::throw_shape("ctc_loss expects [T,V]");
  const Index T = log_probs.dim(0), V = log_probs.dim(1);
  const Index L = static_cast<Index>(target.size()), Lp = 2 * L + 1;
  for (Index l : target)
    if (l == blank || l < 0 || l >= V) throw IndexOutOfRange("invalid CTC label " + std::to_string(l));
  const double ninf = -std::numeric_limits<double>::infinity();
  const S* lp = log_probs.data().data();
  auto label = [&](Index s) { return s % 2 == 0 ? blank : target[s / 2]; };
  auto skip_allowed = [&](Index s) { return s % 2 == 1 && s >= 2 && label(s) != label(s - 2); };

  auto alpha = std::make_shared<std::vector<double>>(static_cast<std::size_t>(T * Lp), ninf);
  auto a = [&](Index t, Index s) -> double& { return (*alpha)[t * Lp + s]; };
  if (T > 0) {
    a(0, 0) = lp[blank];
    if (Lp > 1) a(0, 1) = lp[label(1)];
  }
  for (Index t = 1; t < T; ++t)
    for (Index s = 0; s < Lp; ++s) {
      double v = a(t - 1, s);
      if (s >= 1) v = detail::log_add(v, a(t - 1, s - 1));
      if (skip_allowed(s)) v = detail::log_add(v, a(t - 1, s - 2));
      a(t, s) = v == ninf ? ninf : v + lp[t * V + label(s)];
    }
  double log_p = ninf;
  if (T > 0) {
    log_p = a(T - 1, Lp - 1);
    if (Lp > 1) log_p = detail::log_add(log_p, a(T - 1, Lp - 2));
  }
  const double loss = -log_p;

  return unisign::detail::make_result<S>({}, {static_cast<S>(loss)}, {log_probs}, [alpha, target, blank, T, V, L, Lp, log_p, ninf](Node<S>& o) {
    auto* p = unisign::detail::grad_parent(o, 0);
    if (!p || log_p == ninf) return;
    const S* lp = p->value.data();
    auto label = [&](Index s) { return s % 2 == 0 ? blank : target[s / 2]; };
    auto skip_allowed = [&](Index s) { return s % 2 == 1 && s >= 2 && label(s) != label(s - 2); };
    // beta excludes the emission at its own frame.
    std::vector<double> beta(static_cast<std::size_t>(T * Lp), ninf);
    auto b = [&](Index t, Index s) -> double& { return beta[t * Lp + s]; };
    b(T - 1, Lp - 1) = 0.0;
    if (Lp > 1) b(T - 1, Lp - 2) = 0.0;
    for (Index t = T - 2; t >= 0; --t)
      for (Index s = 0; s < Lp; ++s) {
        double v = ninf;
        for (Index next = s; next <= std::min(s + 2, Lp - 1); ++next) {
          if (next == s + 2 && !skip_allowed(next)) continue;
          if (b(t + 1, next) == ninf) continue;
          v = detail::log_add(v, b(t + 1, next) + lp[(t + 1) * V + label(next)]);
        }
        b(t, s) = v;
      }
    S* g = p->grad_data();
    const double scale = static_cast<double>(o.grad[0]);
    for (Index t = 0; t < T; ++t)
      for (Index s = 0; s < Lp; ++s) {
        const double ab = (*alpha)[t * Lp + s] + b(t, s);
        if (ab == ninf) continue;
        g[t * V + label(s)] -= static_cast<S>(scale * std::exp(ab - log_p));
      }
    (void)L;
  });
}

/// Best-path decoding: per-frame argmax, repeats merged, blanks removed.
template <class S>
std::vector<Index> ctc_greedy_decode(const Tensor<S>& log_probs, Index blank = 0) {
  const Index T = log_probs.dim(0), V = log_probs.dim(1);
  std::vector<Index> out;
  Index prev = -1;
  for (Index t = 0; t < T; ++t) {
    const S* row = log_probs.data().data() + t * V;
    const Index best = std::max_element(row, row + V) - row;
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace unisign::nn
