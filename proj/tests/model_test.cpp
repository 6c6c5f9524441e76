// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "unisign/checkpoint.hpp"
#include "unisign/model.hpp"
#include "unisign/toy.hpp"

using namespace unisign;

namespace {

ModelConfig small_config(bool rgb, double p_samp) {
  ModelConfig c;
  c.encoder.input_linear_dim = 8;
  c.encoder.gcn_dims = {8, 16};
  c.encoder.temporal_dims = {16};
  c.lm.d_model = 16;
  c.lm.heads = 2;
  c.lm.ffn_dim = 32;
  c.lm.encoder_layers = 1;
  c.lm.decoder_layers = 1;
  c.pgf.channels = 16;
  c.pgf.heads = 2;
  c.pgf.deform_points = 2;
  c.vision.conv_channels = {4, 8};
  c.vision.output_channels = 16;
  c.crop.output_size = 32;
  c.sampler.p_samp = p_samp;
  c.use_rgb = rgb;
  return c;
}

toy::ClipData toy_clip(Index T) {
  toy::CorpusOptions o;
  o.clips = 1;
  o.min_frames = o.max_frames = T;
  o.render_video = true;
  return toy::sentence_corpus(o).front();
}

Clip clip_of(const toy::ClipData& d, bool frames) {
  Clip c;
  c.clip_id = d.record.clip_id;
  NormalizeOptions n;
  n.frame_width = d.record.frame_width;
  n.frame_height = d.record.frame_height;
  c.pose = group_and_normalize(d.pose, canonical_groups(), n);
  if (frames) c.frames = std::make_shared<InMemoryFrames>(d.frames);
  return c;
}

/// A pose-only model carrying the same weights as `rgb`.
template <class S>
std::unique_ptr<UniSignModel<S>> pose_only_copy(UniSignModel<S>& rgb, ModelConfig cfg, Index vocab) {
  cfg.use_rgb = false;
  Rng rng(99);
  auto m = std::make_unique<UniSignModel<S>>(cfg, vocab, rng);
  auto dst = nn::params_of(*m);
  restore_params(dst, capture_params(nn::params_of(rgb)), true);
  return m;
}

template <class S>
bool bit_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST(Model, DefaultDimensionsGiveFourTimesChannels) {
  Rng rng(1);
  ModelConfig cfg;
  UniSignModel<float> m(cfg, 50, rng);
  for (Index T : {1, 7}) {
    NoGradGuard g;
    const auto f = m.sign_features(clip_of(toy_clip(T), false));
    EXPECT_EQ(f.shape(), (Shape{T, 1024}));
    EXPECT_EQ(m.memory(clip_of(toy_clip(T), false)).shape(), (Shape{T, 256}));
  }
}

TEST(Model, ZeroSamplingRateIsBitIdenticalToPoseOnly) {
  Rng rng(2);
  const auto cfg = small_config(true, 0.0);
  UniSignModel<double> rgb(cfg, 30, rng);
  auto pose = pose_only_copy(rgb, cfg, 30);
  const auto d = toy_clip(12);
  ForwardStats st;
  const auto a = rgb.sign_features(clip_of(d, true), 0, &st);
  EXPECT_EQ(st.rgb_frames, 0);
  EXPECT_TRUE(bit_equal(a, pose->sign_features(clip_of(d, false))));
}

TEST(Model, FreshGateKeepsPoseOnlyOutputsWhileFramesAreFused) {
  Rng rng(3);
  const auto cfg = small_config(true, 0.5);
  UniSignModel<double> rgb(cfg, 30, rng);
  auto pose = pose_only_copy(rgb, cfg, 30);
  const auto d = toy_clip(12);
  ForwardStats st;
  const auto fused = rgb.sign_features(clip_of(d, true), 0, &st);
  EXPECT_GT(st.rgb_frames, 0);
  EXPECT_LE(st.rgb_frames, 12);  // at most six per hand
  EXPECT_TRUE(bit_equal(fused, pose->sign_features(clip_of(d, false))));

  // Opening the gate changes the features.
  auto params = nn::params_of(rgb);
  for (auto& p : params.items())
    if (p.name.find(".tau") != std::string::npos) p.tensor.mutable_data()[0] = 1.0;
  for (auto& p : params.items())
    if (p.name.find(".gate.") != std::string::npos && p.name.find("bias") != std::string::npos)
      for (auto& v : p.tensor.mutable_data()) v = 2.0;
  EXPECT_FALSE(bit_equal(rgb.sign_features(clip_of(d, true), 0), fused));
}

TEST(Model, SamplingDependsOnEpochButEvaluationIsRepeatable) {
  Rng rng(4);
  auto cfg = small_config(true, 0.3);
  UniSignModel<double> m(cfg, 30, rng);
  auto params = nn::params_of(m);
  for (auto& p : params.items())
    if (p.name.find(".tau") != std::string::npos) p.tensor.mutable_data()[0] = 1.0;
  for (auto& p : params.items())
    if (p.name.find(".gate.") != std::string::npos && p.name.find("bias") != std::string::npos)
      for (auto& v : p.tensor.mutable_data()) v = 2.0;
  const auto d = toy_clip(40);
  const auto e1 = m.sign_features(clip_of(d, true));
  EXPECT_TRUE(bit_equal(e1, m.sign_features(clip_of(d, true))));
  bool any_differs = false;
  for (std::uint64_t epoch = 0; epoch < 5; ++epoch) any_differs |= !bit_equal(m.sign_features(clip_of(d, true), epoch), e1);
  EXPECT_TRUE(any_differs);
}

TEST(Model, MissingFramesFallBackToPoseAndAreReported) {
  Rng rng(5);
  UniSignModel<double> m(small_config(true, 0.5), 30, rng);
  ForwardStats st;
  m.sign_features(clip_of(toy_clip(10), false), 0, &st);
  EXPECT_TRUE(st.rgb_missing);
  auto short_video = toy_clip(10);
  short_video.frames.resize(5);
  EXPECT_THROW(m.sign_features(clip_of(short_video, true), 0), LengthMismatch);
}

TEST(Model, ParameterNamesArePrefixedByModule) {
  Rng rng(6);
  UniSignModel<double> m(small_config(true, 0.1), 30, rng);
  std::set<std::string> prefixes;
  auto params = nn::params_of(m);
  for (const auto& p : params.items()) prefixes.insert(p.name.substr(0, p.name.find('.')));
  EXPECT_EQ(prefixes, (std::set<std::string>{"encoder", "projection", "lm", "vision", "pgf_lh", "pgf_rh"}));
  EXPECT_THROW(UniSignModel<double>(small_config(true, 1.5), 30, rng), ConfigError);
  auto bad = small_config(true, 0.1);
  bad.pgf.channels = 32;
  EXPECT_THROW(UniSignModel<double>(bad, 30, rng), ConfigError);
}
