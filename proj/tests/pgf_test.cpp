// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "support/gradcheck.hpp"
#include "unisign/pgf.hpp"

using namespace unisign;

namespace {

template <class S>
Tensor<S> randn(Shape s, Rng& rng, double scale = 1.0) {
  std::vector<S> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = static_cast<S>(scale * normal01(rng));
  return Tensor<S>::from(std::move(v), std::move(s));
}

template <class S>
Tensor<S> rand_coords(Index n, Rng& rng) {
  std::vector<S> v(static_cast<std::size_t>(2 * n));
  for (auto& x : v) x = static_cast<S>(uniform01(rng));
  return Tensor<S>::from(std::move(v), {n, 2});
}

template <class S>
void randomize(Tensor<S>& t, Rng& rng, double scale) {
  for (auto& x : t.mutable_data()) x = static_cast<S>(scale * normal01(rng));
}

}  // namespace

TEST(Fusion, FreshModuleReturnsPoseExactly) {
  Rng rng(1);
  PGFConfig cfg;
  for (FusionMode mode : {FusionMode::deformable, FusionMode::cross_attention}) {
    cfg.mode = mode;
    PriorGuidedFusion<float> pgf(cfg, rng);
    for (int trial = 0; trial < 5; ++trial) {
      const auto pose = randn<float>({21, 256}, rng, 3.0);
      const auto r = pgf.fuse_frame(pose, randn<float>({7, 7, 256}, rng), rand_coords<float>(21, rng));
      EXPECT_TRUE(std::equal(r.fused.data().begin(), r.fused.data().end(), pose.data().begin()));
      for (float g : r.gate.data()) EXPECT_EQ(g, 0.0f);
    }
  }
}

TEST(Fusion, GateEndpointsAndMidpoint) {
  Rng rng(2);
  PriorGuidedFusion<double> pgf(PGFConfig{}, rng);
  const auto pose = randn<double>({21, 256}, rng);
  const auto map = randn<double>({7, 7, 256}, rng);
  const auto uv = rand_coords<double>(21, rng);
  const auto one = pgf.fuse_frame(pose, map, uv, 1.0);
  for (Index i = 0; i < one.fused.size(); ++i) EXPECT_EQ(one.fused.data()[i], one.enriched.data()[i]);
  const auto half = pgf.fuse_frame(pose, map, uv, 0.5);
  for (Index i = 0; i < half.fused.size(); ++i)
    EXPECT_NEAR(half.fused.data()[i], 0.5 * (pose.data()[i] + half.enriched.data()[i]), 1e-12);
}

TEST(Fusion, ZeroOffsetSamplesAtReferencePoints) {
  Rng rng(3);
  PriorGuidedFusion<float> pgf(PGFConfig{}, rng);
  for (int frame = 0; frame < 100; ++frame) {
    const auto uv = rand_coords<float>(21, rng);
    const auto r = pgf.fuse_frame(randn<float>({21, 256}, rng), randn<float>({7, 7, 256}, rng), uv, std::nullopt, true);
    ASSERT_EQ(r.sampling_locations.size(), 21u * 8 * 4 * 2);
    for (Index n = 0; n < 21; ++n)
      for (Index h = 0; h < 8; ++h)
        for (Index p = 0; p < 4; ++p)
          for (Index k = 0; k < 2; ++k)
            ASSERT_EQ(r.sampling_locations[((n * 8 + h) * 4 + p) * 2 + k], uv.data()[n * 2 + k]);
  }
}

TEST(Fusion, OutOfRangeCoordinatesAreClampedAndCounted) {
  Rng rng(4);
  PriorGuidedFusion<float> pgf(PGFConfig{}, rng);
  auto uv = Tensor<float>::from({-0.2f, 0.5f, 0.3f, 1.7f}, {2, 2});
  const auto r = pgf.fuse_frame(randn<float>({2, 256}, rng), randn<float>({7, 7, 256}, rng), uv, std::nullopt, true);
  EXPECT_EQ(r.clamped_coordinates, 2);
  EXPECT_EQ(r.sampling_locations[0], 0.0f);
  EXPECT_EQ(r.sampling_locations[8 * 4 * 2 + 1], 1.0f);
}

TEST(Fusion, DeformSampleBilinearIdentities) {
  // 2 x 3 map, 2 channels: cell (i, j) holds (10 i + j, -j).
  std::vector<double> m;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) m.insert(m.end(), {10.0 * i + j, -1.0 * j});
  const auto map = Tensor<double>::from(m, {2, 3, 2});
  const auto pts = Tensor<double>::from({(1 + 0.5) / 3, (1 + 0.5) / 2,  // cell (1, 1) center
                                         1.0 / 3, 0.25},                // midway between cells (0, 0) and (0, 1)
                                        {2, 2});
  const auto out = PriorGuidedFusion<double>::deform_sample(map, pts);
  EXPECT_DOUBLE_EQ(out.at({0, 0}), 11.0);
  EXPECT_DOUBLE_EQ(out.at({0, 1}), -1.0);
  EXPECT_DOUBLE_EQ(out.at({1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(out.at({1, 1}), -0.5);

  const auto flat = Tensor<double>::full({3, 3, 4}, 2.5);
  Rng rng(5);
  std::vector<double> any;
  for (int i = 0; i < 20; ++i) any.push_back(uniform(rng, -0.5, 1.5));
  const auto sampled = PriorGuidedFusion<double>::deform_sample(flat, Tensor<double>::from(any, {10, 2}));
  for (double v : sampled.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Fusion, ShapeLawAcrossFrames) {
  Rng rng(6);
  PriorGuidedFusion<float> pgf(PGFConfig{}, rng);
  std::vector<Tensor<float>> uv;
  for (int k = 0; k < 3; ++k) uv.push_back(rand_coords<float>(21, rng));
  const auto out = pgf.fuse(randn<float>({3, 21, 256}, rng), randn<float>({3, 7, 7, 256}, rng), uv);
  EXPECT_EQ(out.shape(), (Shape{3, 21, 256}));
  EXPECT_THROW(pgf.fuse(randn<float>({2, 21, 256}, rng), randn<float>({3, 7, 7, 256}, rng), uv), ShapeError);
}

TEST(Fusion, PerChannelGateShape) {
  Rng rng(7);
  PGFConfig cfg;
  cfg.per_channel_gate = true;
  PriorGuidedFusion<float> pgf(cfg, rng);
  const auto r = pgf.fuse_frame(randn<float>({5, 256}, rng), randn<float>({7, 7, 256}, rng), rand_coords<float>(5, rng));
  EXPECT_EQ(r.gate.shape(), (Shape{5, 256}));
}

TEST(Fusion, ConfigValidation) {
  PGFConfig cfg;
  cfg.heads = 6;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.heads = 8;
  cfg.deform_points = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_fusion_mode("cross_attention"), FusionMode::cross_attention);
  EXPECT_THROW(parse_fusion_mode("sum"), ConfigError);
}

TEST(Fusion, GradientCheckThroughSampling) {
  Rng rng(8);
  PGFConfig cfg;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.deform_points = 2;
  PriorGuidedFusion<double> pgf(cfg, rng);
  // Move away from the zero initialization so every branch carries gradient.
  randomize(pgf.offset_predictor().weight, rng, 0.05);
  randomize(pgf.offset_predictor().bias, rng, 0.05);
  randomize(pgf.gate().weight, rng, 0.5);
  randomize(pgf.gate().bias, rng, 0.5);
  pgf.tau().mutable_data()[0] = 0.8;

  const auto pose = randn<double>({2, 4}, rng);
  const auto map = randn<double>({3, 3, 4}, rng);
  const auto uv = Tensor<double>::from({0.3, 0.6, 0.55, 0.25}, {2, 2});
  const auto w = randn<double>({2, 4}, rng);
  auto loss = [&] { return sum_all(mul(pgf.fuse_frame(pose, map, uv).fused, w)); };
  const auto res = unisign::testing::grad_check(loss, nn::params_of(pgf).items());
  EXPECT_LE(res.max_rel_error, 1e-3) << res.worst;
  EXPECT_GT(res.checked, 50u);
}
