// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "support/tempdir.hpp"
#include "unisign/synthetic.hpp"
#include "unisign/vision.hpp"

using namespace unisign;

namespace {

/// A pose whose left hand spans [x0, x0+w] x [y0, y0+h] in every frame.
GroupedPose hand_span(double x0, double y0, double w, double h, Index T = 4) {
  Rng rng(1);
  auto seq = synthetic::random_pose(T, rng);
  for (Index t = 0; t < T; ++t)
    for (Index n = 0; n < 21; ++n) {
      seq.at(t, 91 + n, 0) = static_cast<float>(x0 + w * static_cast<double>(n % 2));
      seq.at(t, 91 + n, 1) = static_cast<float>(y0 + h * static_cast<double>((n / 2) % 2));
    }
  return group_and_normalize(seq);
}

HandCrop crop_of(const Image& img, GroupId g = GroupId::lh) {
  HandCrop c;
  c.image = img;
  c.group = g;
  return c;
}

}  // namespace

TEST(Vision, MarginRuleWithoutSquaring) {
  const auto g = hand_span(100, 50, 50, 80);
  CropOptions opts;
  opts.square = false;
  const Box b = hand_box(g[GroupId::lh], 0, opts);
  EXPECT_NEAR(b.width(), 60.0, 1e-9);
  EXPECT_NEAR(b.height(), 96.0, 1e-9);
  EXPECT_NEAR(0.5 * (b.x0 + b.x1), 125.0, 1e-9);
  EXPECT_NEAR(0.5 * (b.y0 + b.y1), 90.0, 1e-9);
}

TEST(Vision, DefaultBoxIsSquaredToLargerSide) {
  const Box b = hand_box(hand_span(100, 50, 50, 80)[GroupId::lh], 0);
  EXPECT_NEAR(b.width(), 96.0, 1e-9);
  EXPECT_NEAR(b.height(), 96.0, 1e-9);
  EXPECT_NEAR(0.5 * (b.x0 + b.x1), 125.0, 1e-9);
}

TEST(Vision, DegenerateHandFallsBackToFixedBox) {
  const Box b = hand_box(hand_span(40, 30, 0, 0)[GroupId::lh], 1);
  EXPECT_NEAR(b.width(), 64.0, 1e-9);
  EXPECT_NEAR(b.height(), 64.0, 1e-9);
  EXPECT_NEAR(0.5 * (b.x0 + b.x1), 40.0, 1e-9);
  EXPECT_NEAR(0.5 * (b.y0 + b.y1), 30.0, 1e-9);
}

TEST(Vision, CropCardinalityAndOrder) {
  Rng rng(2);
  const auto seq = synthetic::random_pose(5, rng);
  const InMemoryFrames frames(synthetic::render_frames(seq));
  const auto crops = crop_hands(frames, group_and_normalize(seq), {0, 3});
  ASSERT_EQ(crops.size(), 4u);
  EXPECT_EQ(crops[0].group, GroupId::lh);
  EXPECT_EQ(crops[1].group, GroupId::rh);
  EXPECT_EQ(crops[2].source_frame_index, 3);
  for (const auto& c : crops) {
    EXPECT_EQ(c.image.width, 112);
    EXPECT_EQ(c.image.height, 112);
  }
  EXPECT_THROW(crop_hands(frames, group_and_normalize(seq), {5}), IndexOutOfRange);
}

TEST(Vision, CropsSeeTheHand) {
  Rng rng(3);
  const auto seq = synthetic::random_pose(2, rng);
  const InMemoryFrames frames(synthetic::render_frames(seq));
  const auto grouped = group_and_normalize(seq);
  const auto crop = crop_hand(frames, grouped, GroupId::rh, {1}).front();
  // The dots drawn at keypoints land where crop_coordinates says they are.
  const auto uv = crop_coordinates<double>(grouped[GroupId::rh], 1, crop.crop_box);
  const auto u = uv.at({0, 0}), v = uv.at({0, 1});
  EXPECT_GT(u, 0.0);
  EXPECT_LT(u, 1.0);
  const auto px = static_cast<Index>(u * 112), py = static_cast<Index>(v * 112);
  EXPECT_GT(crop.image.at(px, py, 0) + crop.image.at(px, py, 2), 0.3f);
}

TEST(Vision, OutOfFramePixelsReadAsZero) {
  Image frame(10, 10, 1.0f);
  const auto img = resample_box(frame, {-20, -20, -10, -10}, 8);
  for (float v : img.rgb) EXPECT_EQ(v, 0.0f);
  const auto inside = resample_box(frame, {2, 2, 8, 8}, 8);
  for (float v : inside.rgb) EXPECT_NEAR(v, 1.0f, 1e-6);
}

TEST(Vision, CropCoordinatesMapBoxToUnitSquare) {
  const auto g = hand_span(100, 50, 50, 80);
  const Box b{100, 50, 150, 130};
  const auto uv = crop_coordinates<double>(g[GroupId::lh], 0, b);
  EXPECT_DOUBLE_EQ(uv.at({0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(uv.at({1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(uv.at({2, 1}), 1.0);
}

TEST(Vision, ToyEncoderShapesAndGrouping) {
  Rng rng(4);
  ConvImageEncoder<float> enc(VisionConfig{}, rng);
  Rng data(5);
  std::vector<HandCrop> crops;
  for (int i = 0; i < 4; ++i) {
    Image img(112, 112);
    for (auto& v : img.rgb) v = static_cast<float>(uniform01(data));
    crops.push_back(crop_of(img, i % 2 == 0 ? GroupId::lh : GroupId::rh));
    crops.back().source_frame_index = i;
  }
  const auto out = encode_crops(enc, crops);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.at(GroupId::lh).features.shape(), (Shape{2, 7, 7, 256}));
  EXPECT_EQ(out.at(GroupId::rh).frame_indices, (std::vector<Index>{1, 3}));
  EXPECT_THROW(encode_crops(enc, {}), EmptyInput);
}

TEST(Vision, EncoderDeterministicAndContentSensitive) {
  Rng rng(6);
  ConvImageEncoder<float> enc(VisionConfig{}, rng);
  Image flat(112, 112, 0.5f), structured(112, 112, 0.5f);
  for (Index y = 0; y < 112; ++y)
    for (Index x = 0; x < 112; ++x) structured.at(x, y, (x / 8 + y / 8) % 3) = 1.0f;
  const auto a = encode_crops(enc, {crop_of(flat), crop_of(flat)}).at(GroupId::lh).features;
  const auto again = encode_crops(enc, {crop_of(flat), crop_of(flat)}).at(GroupId::lh).features;
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), again.data().begin()));
  // Within one batch the two copies may take different GEMM kernel paths.
  const Index per = a.size() / 2;
  for (Index i = 0; i < per; ++i) ASSERT_NEAR(a.data()[i], a.data()[per + i], 1e-5f * (1 + std::abs(a.data()[i])));
  const auto b = encode_crops(enc, {crop_of(structured)}).at(GroupId::lh).features;
  double dist = 0;
  for (Index i = 0; i < per; ++i) dist += std::abs(a.data()[i] - b.data()[i]);
  EXPECT_GT(dist, 0.0);
}

TEST(Vision, FrameFilesRoundTrip) {
  unisign::testing::TempDir dir;
  Rng rng(7);
  const auto frames = synthetic::render_frames(synthetic::random_pose(3, rng));
  for (std::size_t i = 0; i < frames.size(); ++i) write_ppm(dir.file("f" + std::to_string(i) + ".ppm"), frames[i]);
  const auto from_dir = open_video(dir.path().string());
  ASSERT_EQ(from_dir->frame_count(), 3);
  write_raw_video(dir.file("clip.npy"), frames);
  const auto raw = open_video(dir.file("clip.npy"));
  ASSERT_EQ(raw->frame_count(), 3);
  const auto a = from_dir->frame(2), b = raw->frame(2);
  EXPECT_EQ(a.rgb, b.rgb);
  for (std::size_t i = 0; i < a.rgb.size(); ++i) EXPECT_NEAR(a.rgb[i], frames[2].rgb[i], 0.5 / 255.0 + 1e-6);
  EXPECT_THROW(raw->frame(3), DecodeError);
  EXPECT_THROW(open_video(dir.file("missing.npy")), DecodeError);
}
