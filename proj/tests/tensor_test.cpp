// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>

#include "support/gradcheck.hpp"
#include "unisign/nn/ctc.hpp"
#include "unisign/nn/layers.hpp"
#include "unisign/tensor/ops.hpp"

using namespace unisign;
using unisign::testing::as_params;
using unisign::testing::grad_check;

namespace {

Tensor<double> randn(Shape s, Rng& rng, bool grad = true) {
  std::vector<double> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = normal01(rng);
  return Tensor<double>::from(std::move(v), std::move(s), grad);
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Tensor, BroadcastArithmetic) {
  auto a = Tensor<double>::from({1, 2, 3, 4, 5, 6}, {2, 3});
  auto b = Tensor<double>::from({10, 20, 30}, {3});
  auto c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(c.at({1, 2}), 36);
  auto d = mul(a, Tensor<double>::from({2, 3}, {2, 1}));
  EXPECT_DOUBLE_EQ(d.at({0, 1}), 4);
  EXPECT_DOUBLE_EQ(d.at({1, 0}), 12);
  EXPECT_THROW(add(a, Tensor<double>::from({1, 2}, {2})), ShapeError);
}

TEST(Tensor, GradientsOfElementwiseAndBroadcast) {
  Rng rng(1);
  auto a = randn({2, 3, 4}, rng), b = randn({1, 3, 1}, rng), c = randn({4}, rng);
  auto r = grad_check([&] { return sum_all(tanh(mul(sub(a, b), add(gelu(a), c)))); },
                      as_params({{"a", a}, {"b", b}, {"c", c}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  auto p = Tensor<double>::from({0.3, 0.7, 1.4}, {3}, true);
  r = grad_check([&] { return sum_all(mul(log(p), sigmoid(exp(p)))); }, as_params({{"p", p}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Tensor, GradientsOfLinearAlgebra) {
  Rng rng(2);
  auto x = randn({2, 3, 5}, rng), w = randn({5, 4}, rng), b = randn({4}, rng);
  auto m = randn({4, 3}, rng);
  auto r = grad_check([&] { return sum_all(relu(matmul(reshape(linear(x, w, b), {6, 4}), m))); },
                      as_params({{"x", x}, {"w", w}, {"b", b}, {"m", m}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;

  auto q = randn({2, 3, 4}, rng), k = randn({2, 5, 4}, rng), v = randn({2, 5, 3}, rng);
  auto wout = randn({2, 3, 3}, rng, false);
  r = grad_check([&] { return sum_all(mul(bmm(softmax(bmm(q, k, true)), v), wout)); },
                 as_params({{"q", q}, {"k", k}, {"v", v}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Tensor, GradientsOfNormalizationAndReductions) {
  Rng rng(3);
  auto x = randn({3, 6}, rng), g = randn({6}, rng), b = randn({6}, rng);
  auto w = randn({3, 6}, rng, false);
  auto r = grad_check([&] { return sum_all(mul(layer_norm(x, g, b), w)); }, as_params({{"x", x}, {"g", g}, {"b", b}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  r = grad_check([&] { return sum_all(pick(log_softmax(x), {1, 5, 0})); }, as_params({{"x", x}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  auto y = randn({2, 3, 4}, rng);
  auto wy = randn({2, 4}, rng, false);
  r = grad_check([&] { return add(sum_all(mul(mean(y, 1), wy)), sum_all(mul(sum(permute(y, {2, 0, 1}), 2), transpose(wy)))); },
                 as_params({{"y", y}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Tensor, GradientsOfIndexing) {
  Rng rng(4);
  auto x = randn({4, 2, 3}, rng), y = randn({4, 2, 2}, rng), s = randn({2, 2, 3}, rng);
  auto w = randn({3, 2, 5}, rng, false);
  auto r = grad_check(
      [&] {
        auto cat = concat<double>({x, y}, 2);                         // [4,2,5]
        auto sel = index_select(cat, 0, {3, 1, 1});                    // [3,2,5]
        auto sl = slice(cat, 2, 1, 4);                                 // [4,2,3]
        auto sc = scatter_rows(sl, s, {2, 0});                         // [4,2,3]
        return add(sum_all(mul(sel, w)), sum_all(mul(sc, sc)));
      },
      as_params({{"x", x}, {"y", y}, {"s", s}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Tensor, ScatterRowsLeavesOtherRowsBitIdentical) {
  auto base = Tensor<float>::from({1, 2, 3, 4, 5, 6}, {3, 2});
  auto src = Tensor<float>::from({9, 9}, {1, 2});
  auto out = scatter_rows(base, src, {1});
  EXPECT_EQ(out.at({0, 1}), 2.0f);
  EXPECT_EQ(out.at({1, 0}), 9.0f);
  EXPECT_EQ(out.at({2, 1}), 6.0f);
  EXPECT_THROW(scatter_rows(base, src, {3}), IndexOutOfRange);
}

TEST(Tensor, GradientsOfConvolutionHelpers) {
  Rng rng(5);
  auto x = randn({4, 2, 3}, rng), w = randn({15, 2}, rng);
  auto r = grad_check([&] { return sum_all(tanh(linear(unfold_time(x, 5), w))); }, as_params({{"x", x}, {"w", w}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  auto img = randn({2, 5, 5, 2}, rng), k = randn({18, 3}, rng);
  r = grad_check([&] { return sum_all(tanh(linear(im2col(img, 3, 2, 1), k))); }, as_params({{"img", img}, {"k", k}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  auto adj = std::make_shared<const Buffer<double>>(Buffer<double>{0.5, 0.5, 0.2, 0.8});
  r = grad_check([&] { return sum_all(tanh(node_mix(adj, x))); }, as_params({{"x", x}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Tensor, UnfoldTimeIsZeroPaddedAndCentered) {
  auto x = Tensor<double>::from({1, 2, 3}, {3, 1, 1});
  auto u = unfold_time(x, 3);
  EXPECT_EQ(u.shape(), (Shape{3, 1, 3}));
  const std::vector<double> expected{0, 1, 2, 1, 2, 3, 2, 3, 0};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(u.data()[i], expected[i]);
}

TEST(Tensor, GridSampleGradientOffGridPoints) {
  Rng rng(6);
  auto map = randn({3, 3, 2}, rng);
  auto pts = Tensor<double>::from({0.31, 0.62, 0.77, 0.12, 0.45, 0.93}, {3, 2}, true);
  auto r = grad_check([&] { return sum_all(tanh(grid_sample(map, pts))); }, as_params({{"map", map}, {"pts", pts}}));
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Tensor, StorageIsCacheLineAligned) {
  // Eigen picks kernels by pointer alignment, so results must not depend on where the heap puts a buffer.
  auto a = Tensor<float>::from({1, 2, 3, 4, 5, 6}, {2, 3}, true);
  auto b = Tensor<float>::from({1, 0, 0, 1, 1, 1}, {3, 2});
  auto c = matmul(a, b);
  sum_all(c).backward();
  for (const float* p : {a.data().data(), c.data().data(), a.grad().data()})
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(p) % 64, 0u);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  auto w = Tensor<double>::from({1, 2}, {2}, true);
  {
    NoGradGuard g;
    auto y = sum_all(mul(w, w));
    EXPECT_FALSE(y.requires_grad());
  }
  auto y = sum_all(mul(w, w));
  EXPECT_TRUE(y.requires_grad());
  y.backward();
  EXPECT_DOUBLE_EQ(w.grad()[1], 4.0);
}

TEST(Tensor, LeafGradientsAccumulateAcrossBackwardCalls) {
  auto w = Tensor<double>::from({3}, {1}, true);
  sum_all(mul(w, w)).backward();
  sum_all(mul(w, w)).backward();
  EXPECT_DOUBLE_EQ(w.grad()[0], 12.0);
}

TEST(Lstm, GradientCheck) {
  Rng rng(7);
  Rng init(8);
  nn::Lstm<double> lstm(3, 4, init);
  auto x = randn({5, 3}, rng);
  auto params = nn::params_of(lstm).items();
  params.push_back({"x", x});
  auto r = grad_check([&] { return sum_all(tanh(lstm(x))); }, params);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

// Brute-force CTC: enumerate every frame labelling, collapse, sum probabilities.
double ctc_brute_force(const std::vector<std::vector<double>>& logp, const std::vector<Index>& target) {
  const std::size_t T = logp.size(), V = logp[0].size();
  std::vector<std::size_t> path(T, 0);
  double total = 0;
  while (true) {
    std::vector<Index> collapsed;
    Index prev = -1;
    double lp = 0;
    for (std::size_t t = 0; t < T; ++t) {
      lp += logp[t][path[t]];
      const Index l = static_cast<Index>(path[t]);
      if (l != 0 && l != prev) collapsed.push_back(l);
      prev = l;
    }
    if (collapsed == target) total += std::exp(lp);
    std::size_t t = 0;
    while (t < T && ++path[t] == V) path[t++] = 0;
    if (t == T) break;
  }
  return -std::log(total);
}

TEST(Ctc, MatchesBruteForceEnumeration) {
  Rng rng(9);
  for (const auto& target : std::vector<std::vector<Index>>{{1}, {1, 2}, {2, 2}, {1, 2, 1}}) {
    auto logits = randn({5, 3}, rng);
    auto lp = log_softmax(logits);
    std::vector<std::vector<double>> table(5, std::vector<double>(3));
    for (int t = 0; t < 5; ++t)
      for (int v = 0; v < 3; ++v) table[t][v] = lp.at({t, v});
    EXPECT_NEAR(nn::ctc_loss(lp, target).item(), ctc_brute_force(table, target), 1e-10);
  }
}

TEST(Ctc, GradientCheck) {
  Rng rng(10);
  auto logits = randn({6, 4}, rng);
  auto r = grad_check([&] { return nn::ctc_loss(log_softmax(logits), {1, 3, 3}); }, as_params({{"logits", logits}}));
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Ctc, PerfectAlignmentDrivesLossToZero) {
  // Frames emit g1 g1 blank g2 with growing confidence.
  double previous = 1e9;
  for (double conf : {0.9, 0.99, 0.999, 0.999999}) {
    const std::vector<Index> path{1, 1, 0, 2};
    std::vector<double> v;
    for (Index k : path)
      for (Index j = 0; j < 3; ++j) v.push_back(std::log(j == k ? conf : (1 - conf) / 2));
    const double loss = nn::ctc_loss(Tensor<double>::from(v, {4, 3}), {1, 2}).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-4);
}

TEST(Ctc, GreedyDecodeCollapsesRepeatsAndBlanks) {
  std::vector<double> v;
  for (Index k : {1, 1, 0, 1, 2, 2, 0})
    for (Index j = 0; j < 3; ++j) v.push_back(j == k ? 0.0 : -5.0);
  EXPECT_EQ(nn::ctc_greedy_decode(Tensor<double>::from(v, {7, 3})), (std::vector<Index>{1, 1, 2}));
}
